//! Parameter counts, the predicted overhead of the full downward traversal
//! over the lightweight variant, and measured multiply-add counts.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::interaction::{EdgeSet, InteractionNet, ResidualStack};
use crate::model::{FlowModel, ModelConfig, Variant, TAG_DOWN, TAG_MEMORY, TAG_PHYSICS};
use crate::nn::{FlopCounter, Graph, Mlp, MlpSpec, Tensor, UNTAGGED};

/// Scalar parameter count of a network, independent of freezing.
pub trait ParamCount {
    fn param_count(&self) -> usize;
}

impl ParamCount for MlpSpec {
    fn param_count(&self) -> usize {
        MlpSpec::param_count(self)
    }
}

impl ParamCount for Mlp {
    fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}

impl ParamCount for EdgeSet {
    fn param_count(&self) -> usize {
        EdgeSet::param_count(self)
    }
}

impl ParamCount for InteractionNet {
    fn param_count(&self) -> usize {
        self.mlp_param_count()
    }
}

impl<A: ParamCount, B: ParamCount> ParamCount for (A, B) {
    fn param_count(&self) -> usize {
        self.0.param_count() + self.1.param_count()
    }
}

impl ParamCount for ResidualStack {
    fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(ParamCount::param_count)
            .sum::<usize>()
            + self
                .edges
                .iter()
                .map(ParamCount::param_count)
                .sum::<usize>()
    }
}

pub fn count_params(net: &impl ParamCount) -> usize {
    net.param_count()
}

/// `1 + (S * eta_D + 1) / eta_B`.
pub fn predicted_ratio(s: usize, eta_b: f64, eta_d: f64) -> Result<f64> {
    if !(eta_b > 0.0 && eta_d > 0.0) || !eta_b.is_finite() || !eta_d.is_finite() {
        return Err(Error::contract(format!(
            "cost ratios must be positive and finite, got eta_B = {eta_b}, eta_D = {eta_d}"
        )));
    }
    Ok(1.0 + (s as f64 * eta_d + 1.0) / eta_b)
}

/// Costs of the three downward roles on one level. `d` is the cost of one
/// layer of the memory stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelCost {
    pub b: f64,
    pub d: f64,
    pub p: f64,
}

/// `sum_k [C(B_k) + S * C(D_k) + C(P_k)]` over exactly `k_levels` levels.
pub fn downward_cost_total(levels: &[LevelCost], k_levels: usize, s: usize) -> Result<f64> {
    if k_levels < 2 {
        return Err(Error::contract(format!("K = {k_levels} must be >= 2")));
    }
    if levels.len() != k_levels {
        return Err(Error::contract(format!(
            "{} level costs given for K = {k_levels}",
            levels.len()
        )));
    }
    Ok(levels.iter().map(|c| c.b + s as f64 * c.d + c.p).sum())
}

/// Multiply-adds of one forward pass, attributed per role tag.
pub fn measure_flops(model: &FlowModel, x: &Tensor, f: &Tensor) -> Result<FlopCounter> {
    let mut g = Graph::new(&model.store);
    g.enable_flop_counting();
    model.forward(&mut g, x, f, crate::model::LatentInput::Mean)?;
    let counts = g.flops()?.clone();
    if counts.get(UNTAGGED) != 0 {
        return Err(Error::contract("forward pass did work outside any role"));
    }
    Ok(counts)
}

/// Cost of the downward traversal: projections, memory stacks and heads.
pub fn downward_flops(counts: &FlopCounter) -> u64 {
    counts.get(TAG_DOWN) + counts.get(TAG_MEMORY) + counts.get(TAG_PHYSICS)
}

/// Parameter counts of the downward roles on one level; zero where a role
/// has no network (memory on the top level, heads of the lightweight variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelParams {
    pub level: usize,
    pub down: usize,
    /// One layer of the memory stack.
    pub memory_layer: usize,
    pub physics: usize,
}

pub fn level_params(model: &FlowModel) -> Vec<LevelParams> {
    (0..model.hier.depth())
        .map(|k| LevelParams {
            level: k,
            down: model.down.get(k).map_or(0, count_params),
            memory_layer: model.mem.get(k).map_or(0, |s| count_params(s) / s.depth()),
            physics: model.phys.get(k).map_or(0, count_params),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub k_levels: usize,
    pub stack_depth: usize,
    pub levels: Vec<LevelParams>,
    /// Least-squares multiply-adds per parameter over the per-role pairs.
    pub delta: f64,
    /// `|B| / |P|` and `|D| / |P|` on the finest level.
    pub eta_b: f64,
    pub eta_d: f64,
    pub predicted_ratio: f64,
    pub flow_flops: FlopCounter,
    pub light_flops: FlopCounter,
    pub measured_ratio: f64,
}

impl CostReport {
    pub fn relative_gap(&self) -> f64 {
        (self.measured_ratio - self.predicted_ratio).abs() / self.predicted_ratio
    }

    /// Comma-separated `section,key,value` rows.
    pub fn to_table(&self) -> String {
        let mut s = String::from("section,key,value\n");
        let mut row = |sec: &str, key: &str, v: String| {
            let _ = writeln!(s, "{sec},{key},{v}");
        };
        row("config", "K", self.k_levels.to_string());
        row("config", "S", self.stack_depth.to_string());
        for l in &self.levels {
            row("params", &format!("down.{}", l.level), l.down.to_string());
            row(
                "params",
                &format!("memory_layer.{}", l.level),
                l.memory_layer.to_string(),
            );
            row(
                "params",
                &format!("physics.{}", l.level),
                l.physics.to_string(),
            );
        }
        for (name, c) in [
            ("flow", &self.flow_flops),
            ("lightweight", &self.light_flops),
        ] {
            for (tag, n) in c.tags() {
                row(&format!("flops.{name}"), tag, n.to_string());
            }
        }
        row("model", "delta", format!("{:?}", self.delta));
        row("model", "eta_B", format!("{:?}", self.eta_b));
        row("model", "eta_D", format!("{:?}", self.eta_d));
        row("ratio", "predicted", format!("{:?}", self.predicted_ratio));
        row("ratio", "measured", format!("{:?}", self.measured_ratio));
        s
    }
}

/// Per-role `(parameter count, multiply-adds)` pairs for the delta fit.
fn role_pairs(model: &FlowModel, counts: &FlopCounter) -> Vec<(f64, f64)> {
    let sum = |f: &dyn Fn(&LevelParams) -> usize| level_params(model).iter().map(f).sum::<usize>();
    let s = model.config.stack_depth;
    vec![
        (sum(&|l| l.down) as f64, counts.get(TAG_DOWN) as f64),
        (
            sum(&|l| l.memory_layer * s) as f64,
            counts.get(TAG_MEMORY) as f64,
        ),
        (sum(&|l| l.physics) as f64, counts.get(TAG_PHYSICS) as f64),
    ]
}

/// Slope through the origin minimising `sum (y - delta x)^2`.
pub fn fit_delta(pairs: &[(f64, f64)]) -> f64 {
    let sxy: f64 = pairs.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Compare a full model against its lightweight counterpart on one input.
pub fn compare(flow: &FlowModel, light: &FlowModel, x: &Tensor, f: &Tensor) -> Result<CostReport> {
    if flow.config != light.config {
        return Err(Error::contract(
            "flow and lightweight models were built from different configs",
        ));
    }
    let flow_flops = measure_flops(flow, x, f)?;
    let light_flops = measure_flops(light, x, f)?;
    let levels = level_params(flow);
    let base = levels[0];
    let (b, d, p) = (
        base.down as f64,
        base.memory_layer as f64,
        base.physics as f64,
    );
    let (eta_b, eta_d) = (b / p, if d > 0.0 { d / p } else { f64::NAN });
    let s = if flow.variant == Variant::Flow {
        flow.config.stack_depth
    } else {
        0
    };
    let predicted = if flow.variant == light.variant {
        1.0
    } else {
        predicted_ratio(s, eta_b, eta_d)?
    };
    let light_total = downward_flops(&light_flops);
    if light_total == 0 {
        return Err(Error::contract(
            "lightweight model recorded no downward work",
        ));
    }
    Ok(CostReport {
        k_levels: flow.config.k_levels,
        stack_depth: flow.config.stack_depth,
        levels,
        delta: fit_delta(&role_pairs(flow, &flow_flops)),
        eta_b,
        eta_d,
        predicted_ratio: predicted,
        measured_ratio: downward_flops(&flow_flops) as f64 / light_total as f64,
        flow_flops,
        light_flops,
    })
}

/// Build both variants of `config` and compare them on a zero input.
pub fn cost_report(config: &ModelConfig) -> Result<CostReport> {
    let flow = FlowModel::with_variant(config.clone(), Variant::Flow)?;
    let light = FlowModel::with_variant(config.clone(), Variant::Lightweight)?;
    let x = Tensor::zeros(&[config.n_lat, config.n_lon, config.channels]);
    let f = Tensor::zeros(&[config.n_lat, config.n_lon]);
    compare(&flow, &light, &x, &f)
}

/// Reports at each hierarchy depth in `ks`, other settings fixed.
pub fn k_sweep(config: &ModelConfig, ks: &[usize]) -> Result<Vec<CostReport>> {
    ks.iter()
        .map(|&k| {
            cost_report(&ModelConfig {
                k_levels: k,
                ..config.clone()
            })
        })
        .collect()
}

/// `(max - min) / min` of the measured ratios.
pub fn sweep_variation(reports: &[CostReport]) -> f64 {
    let r: Vec<f64> = reports.iter().map(|c| c.measured_ratio).collect();
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}
