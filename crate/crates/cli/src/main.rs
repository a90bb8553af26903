//! `hiflow`: generate data, train, roll out and verify forecasts.
//!
//! Every subcommand works inside a working directory:
//!
//! ```text
//! data/{train,val,test}.hfg, data/manifest.txt
//! checkpoint.hfw, loss_curve.csv
//! forecasts/init_<t>.hfg, forecasts/init_<t>_member_<m>.hfg
//! report.csv, extremes.csv, cost_report.csv, spectra/*.csv
//! ```
//!
//! Exit codes: 0 success, 1 bad input or configuration, 2 filesystem error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hiflow_core::config::RunConfig;
use hiflow_core::cost::{cost_report, k_sweep};
use hiflow_core::data::{
    generate_synthetic, read_grid_file, split_states, stack_states, write_grid_file,
    GridFileHeader, Split, SyntheticDataset,
};
use hiflow_core::ensemble::{ensemble_rollout, LatentSampler};
use hiflow_core::metrics::{
    evaluate, gridded_psd, psd_table, select_quantile_extremes, EvalReport, InitForecast,
};
use hiflow_core::model::{rollout, train_epoch, FlowModel};
use hiflow_core::nn::{load_checkpoint, save_checkpoint, Tensor};
use hiflow_core::series::ForecastSeries;
use hiflow_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "hiflow",
    version,
    about = "Hierarchical graph weather emulator at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (`key = value` lines). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Working directory holding data, checkpoints and outputs.
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the synthetic dataset and write the split files.
    Generate(Common),
    /// Train for one epoch and save the checkpoint and loss curve.
    Train(Common),
    /// Autoregressive forecasts from test-split initial states.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: usize,
        /// Offsets into the test split; repeatable.
        #[arg(long = "init-index", num_args = 1.., default_values_t = [0usize])]
        init_index: Vec<usize>,
        /// Start a forecast every N test states instead of using --init-index.
        #[arg(long)]
        every: Option<usize>,
        /// Ensemble size; requires `ensemble = true` in the config.
        #[arg(long)]
        members: Option<usize>,
        /// Override the latent noise scale.
        #[arg(long)]
        sigma: Option<f64>,
        /// Also write each member trajectory.
        #[arg(long)]
        write_members: bool,
    },
    /// Score every saved forecast against the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., default_values_t = [1usize])]
        lead: Vec<usize>,
    },
    /// Longitudinal power spectra of forecasts and truth at given leads.
    Spectra {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., default_values_t = [1usize])]
        lead: Vec<usize>,
    },
    /// Score forecasts started from quantile-extreme initial states.
    Extremes {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., default_values_t = [0.01, 0.99])]
        q: Vec<f64>,
        #[arg(long, num_args = 1.., default_values_t = [1usize])]
        lead: Vec<usize>,
    },
    /// Parameter counts, predicted and measured overhead, and a depth sweep.
    CostReport {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., default_values_t = [2usize, 3, 4, 5])]
        k: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hiflow: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_config(c: &Common) -> Result<RunConfig> {
    match &c.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn data_dir(c: &Common) -> PathBuf {
    c.workdir.join("data")
}

fn checkpoint_path(c: &Common) -> PathBuf {
    c.workdir.join("checkpoint.hfw")
}

fn forecast_dir(c: &Common) -> PathBuf {
    c.workdir.join("forecasts")
}

fn load_dataset(c: &Common, cfg: &RunConfig) -> Result<SyntheticDataset> {
    let d = SyntheticDataset::load(data_dir(c))?;
    let m = &d.manifest;
    let mc = &cfg.model;
    if (m.n_lat, m.n_lon, m.channels) != (mc.n_lat, mc.n_lon, mc.channels) {
        return Err(Error::Config(format!(
            "dataset grid {}x{}x{} does not match the model config {}x{}x{}",
            m.n_lat, m.n_lon, m.channels, mc.n_lat, mc.n_lon, mc.channels
        )));
    }
    Ok(d)
}

fn load_model(c: &Common, cfg: &RunConfig) -> Result<FlowModel> {
    let mut model = FlowModel::new(cfg.model.clone())?;
    load_checkpoint(&mut model.store, checkpoint_path(c))?;
    model.apply_freeze();
    Ok(model)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(c) => generate(&c),
        Command::Train(c) => train(&c),
        Command::Rollout {
            common,
            steps,
            init_index,
            every,
            members,
            sigma,
            write_members,
        } => run_rollout(
            &common,
            steps,
            &init_index,
            every,
            members,
            sigma,
            write_members,
        ),
        Command::Evaluate { common, lead } => run_evaluate(&common, &lead),
        Command::Spectra { common, lead } => run_spectra(&common, &lead),
        Command::Extremes { common, q, lead } => run_extremes(&common, &q, &lead),
        Command::CostReport { common, k } => run_cost(&common, &k),
    }
}

fn generate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let d = generate_synthetic(&cfg.data)?;
    d.write(data_dir(c))?;
    println!(
        "wrote {} states ({} train, {} val, {} test) to {}",
        d.states.len(),
        d.manifest.n_train,
        d.manifest.n_val,
        d.manifest.n_test,
        data_dir(c).display()
    );
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let d = load_dataset(c, &cfg)?;
    let seq = d.sequence(Split::Train)?;
    let mut model = FlowModel::new(cfg.model.clone())?;
    let curve = train_epoch(&mut model, &seq, cfg.lr, cfg.model.seed)?;
    save_checkpoint(&model.store, checkpoint_path(c))?;
    let mut text = String::from("step,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(text, "{i},{l:?}");
    }
    write_text(&c.workdir.join("loss_curve.csv"), &text)?;
    let n = (curve.len() / 10).max(1);
    let head = curve[..n].iter().sum::<f64>() / n as f64;
    let tail = curve[curve.len() - n..].iter().sum::<f64>() / n as f64;
    println!(
        "trained on {} pairs: first-10% loss {head:.4e}, last-10% loss {tail:.4e}",
        curve.len()
    );
    Ok(())
}

fn write_series(path: &Path, s: &ForecastSeries, shape: &[usize]) -> Result<()> {
    let header = GridFileHeader::new(
        shape[0],
        shape[1],
        shape[2],
        s.len(),
        s.step_hours,
        s.start_index,
    );
    let data = stack_states(&s.states, shape[0], shape[1], shape[2])?;
    write_grid_file(path, &header, &data)
}

fn denormalise(s: ForecastSeries, d: &SyntheticDataset) -> Result<ForecastSeries> {
    let states = s
        .states
        .iter()
        .map(|x| d.norm().invert(x))
        .collect::<Result<Vec<_>>>()?;
    ForecastSeries::new(states, s.start_index, s.step_hours)
}

#[allow(clippy::too_many_arguments)]
fn run_rollout(
    c: &Common,
    steps: usize,
    init_index: &[usize],
    every: Option<usize>,
    members: Option<usize>,
    sigma: Option<f64>,
    write_members: bool,
) -> Result<()> {
    let cfg = load_config(c)?;
    let d = load_dataset(c, &cfg)?;
    let mut model = load_model(c, &cfg)?;
    let m = &d.manifest;
    let test_start = m.split_start(Split::Test);
    let inits: Vec<usize> = match every {
        Some(0) => return Err(Error::Config("--every must be positive".into())),
        Some(n) => (0..m.n_test)
            .step_by(n)
            .filter(|i| i + steps < m.n_test)
            .collect(),
        None => init_index.to_vec(),
    };
    if let Some(&bad) = inits.iter().find(|&&i| i >= m.n_test) {
        return Err(Error::Contract(format!(
            "init index {bad} outside the {}-state test split",
            m.n_test
        )));
    }
    let ensemble = match (members, &mut model.latent) {
        (Some(0), _) => return Err(Error::Config("--members must be >= 1".into())),
        (Some(_), None) => {
            return Err(Error::Config(
                "--members needs `ensemble = true` in the config".into(),
            ))
        }
        (n, Some(l)) => {
            if let Some(s) = sigma {
                if !(s >= 0.0) {
                    return Err(Error::Config(format!("--sigma {s} must be >= 0")));
                }
                l.sigma = s;
            }
            Some(n.unwrap_or(cfg.members))
        }
        (None, None) => {
            if sigma.is_some() {
                return Err(Error::Config(
                    "--sigma needs `ensemble = true` in the config".into(),
                ));
            }
            None
        }
    };
    let dir = forecast_dir(c);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let shape = [m.n_lat, m.n_lon, m.channels];
    let forcing = |t: usize| m.forcing(t);
    let test = d.split(Split::Test);
    for &off in &inits {
        let start = test_start + off;
        let x0 = d.norm().apply(&test[off])?;
        match ensemble {
            Some(n) => {
                let sampler = LatentSampler::for_model(&model, cfg.model.seed ^ start as u64)?;
                let e = ensemble_rollout(&model, &sampler, &x0, &forcing, start, steps, n)?;
                write_series(
                    &dir.join(format!("init_{start}.hfg")),
                    &denormalise(e.mean, &d)?,
                    &shape,
                )?;
                if write_members {
                    for (j, s) in e.members.into_iter().enumerate() {
                        let p = dir.join(format!("init_{start}_member_{j}.hfg"));
                        write_series(&p, &denormalise(s, &d)?, &shape)?;
                    }
                }
            }
            None => {
                let s = rollout(&model, &x0, &forcing, start, steps)?;
                write_series(
                    &dir.join(format!("init_{start}.hfg")),
                    &denormalise(s, &d)?,
                    &shape,
                )?;
            }
        }
    }
    println!(
        "wrote {} forecast(s) of {steps} steps to {}",
        inits.len(),
        dir.display()
    );
    Ok(())
}

fn read_series(path: &Path) -> Result<ForecastSeries> {
    let (h, data) = read_grid_file(path)?;
    ForecastSeries::new(
        split_states(&h, &data),
        h.start_index as usize,
        h.step_hours,
    )
}

/// Parse `init_<t>.hfg` or `init_<t>_member_<m>.hfg`.
fn parse_forecast_name(name: &str) -> Option<(usize, Option<usize>)> {
    let stem = name.strip_prefix("init_")?.strip_suffix(".hfg")?;
    match stem.split_once("_member_") {
        Some((t, m)) => Some((t.parse().ok()?, Some(m.parse().ok()?))),
        None => Some((stem.parse().ok()?, None)),
    }
}

fn load_forecasts(c: &Common) -> Result<Vec<InitForecast>> {
    let dir = forecast_dir(c);
    let missing = || {
        io_err(
            &dir,
            io::Error::new(
                io::ErrorKind::NotFound,
                "no forecasts found; run `hiflow rollout` first",
            ),
        )
    };
    let entries = fs::read_dir(&dir).map_err(|_| missing())?;
    let mut mean: BTreeMap<usize, PathBuf> = BTreeMap::new();
    let mut members: BTreeMap<usize, BTreeMap<usize, PathBuf>> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        match parse_forecast_name(&name) {
            Some((t, None)) => {
                mean.insert(t, entry.path());
            }
            Some((t, Some(j))) => {
                members.entry(t).or_default().insert(j, entry.path());
            }
            None => {}
        }
    }
    if mean.is_empty() {
        return Err(missing());
    }
    mean.into_iter()
        .map(|(t, p)| {
            let m = members
                .remove(&t)
                .unwrap_or_default()
                .values()
                .map(|p| read_series(p))
                .collect::<Result<Vec<_>>>()?;
            Ok(InitForecast {
                series: read_series(&p)?,
                members: m,
            })
        })
        .collect()
}

fn check_leads(leads: &[usize]) -> Result<()> {
    if leads.contains(&0) {
        return Err(Error::Contract("leads are 1-based step counts".into()));
    }
    Ok(())
}

fn report_for(c: &Common, forecasts: &[InitForecast], leads: &[usize]) -> Result<EvalReport> {
    let cfg = load_config(c)?;
    let d = load_dataset(c, &cfg)?;
    let mut r = evaluate(
        forecasts,
        d.split(Split::Test),
        d.manifest.split_start(Split::Test),
        leads,
    )?;
    r.norm = d.manifest.norm.clone();
    Ok(r)
}

fn run_evaluate(c: &Common, leads: &[usize]) -> Result<()> {
    check_leads(leads)?;
    let forecasts = load_forecasts(c)?;
    let table = report_for(c, &forecasts, leads)?.to_table();
    write_text(&c.workdir.join("report.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn run_spectra(c: &Common, leads: &[usize]) -> Result<()> {
    check_leads(leads)?;
    let cfg = load_config(c)?;
    let d = load_dataset(c, &cfg)?;
    let forecasts = load_forecasts(c)?;
    let test = d.split(Split::Test);
    let test_start = d.manifest.split_start(Split::Test);
    let out = c.workdir.join("spectra");
    for &lead in leads {
        let mut pred: Vec<Tensor> = Vec::new();
        let mut truth: Vec<Tensor> = Vec::new();
        for fc in &forecasts {
            let p = fc.series.at_lead(lead).ok_or_else(|| {
                Error::Contract(format!(
                    "lead {lead} exceeds the forecast from init {}",
                    fc.series.start_index
                ))
            })?;
            let t = (fc.series.start_index + lead)
                .checked_sub(test_start)
                .and_then(|i| test.get(i))
                .ok_or_else(|| Error::Contract(format!("no truth at lead {lead}")))?;
            pred.push(p.clone());
            truth.push(t.clone());
        }
        for ch in 0..d.manifest.channels {
            write_text(
                &out.join(format!("forecast_lead{lead}_ch{ch}.csv")),
                &psd_table(&gridded_psd(&pred, ch)?),
            )?;
            write_text(
                &out.join(format!("truth_lead{lead}_ch{ch}.csv")),
                &psd_table(&gridded_psd(&truth, ch)?),
            )?;
        }
    }
    println!(
        "wrote spectra for {} lead(s) to {}",
        leads.len(),
        out.display()
    );
    Ok(())
}

fn run_extremes(c: &Common, qs: &[f64], leads: &[usize]) -> Result<()> {
    check_leads(leads)?;
    let cfg = load_config(c)?;
    let d = load_dataset(c, &cfg)?;
    let forecasts = load_forecasts(c)?;
    let test_start = d.manifest.split_start(Split::Test);
    let mut table = String::new();
    for &q in qs {
        let sets = select_quantile_extremes(d.split(Split::Test), q)?;
        for (ch, idx) in sets.iter().enumerate() {
            let chosen: Vec<InitForecast> = forecasts
                .iter()
                .filter(|f| {
                    f.series
                        .start_index
                        .checked_sub(test_start)
                        .is_some_and(|o| idx.contains(&o))
                })
                .cloned()
                .collect();
            let _ = writeln!(
                table,
                "# q = {q}, variable {ch}: {} selected, {} with forecasts",
                idx.len(),
                chosen.len()
            );
            if chosen.is_empty() {
                continue;
            }
            let r = report_for(c, &chosen, leads)?;
            let _ = writeln!(table, "q,lead,variable,metric,value");
            for row in r.rows.iter().filter(|r| r.channel == ch) {
                for (name, v) in [("rmse", row.rmse), ("mae", row.mae), ("crps", row.crps)] {
                    let _ = writeln!(table, "{q},{},{ch},{name},{v:?}", row.lead);
                }
            }
        }
    }
    if !table.lines().any(|l| !l.starts_with('#')) {
        return Err(Error::Contract(
            "no forecasts start from the selected extreme states; roll out with --every 1".into(),
        ));
    }
    write_text(&c.workdir.join("extremes.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn run_cost(c: &Common, ks: &[usize]) -> Result<()> {
    let cfg = load_config(c)?;
    let report = cost_report(&cfg.model)?;
    let mut table = report.to_table();
    for r in k_sweep(&cfg.model, ks)? {
        let _ = writeln!(table, "sweep,K={},{:?}", r.k_levels, r.measured_ratio);
    }
    write_text(&c.workdir.join("cost_report.csv"), &table)?;
    print!("{table}");
    Ok(())
}
