//! Mini-batch Adam drivers for the forward and inverse problems.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::CollocationSet;
use crate::error::{Error, Result};
use crate::losses::{Batch, Gradients, HistoryLog, HistoryRow, LogParams, LossBreakdown, LossEngine, LossMode, Objective};
use crate::network::{architecture, save_checkpoint, Checkpoint, MlpParams, OptimizerMoments};
use crate::physics::NondimParams;

/// Allowed range for inferred Re and Pe.
pub const PARAM_RANGE: (f64, f64) = (1e-2, 1e6);

/// Stream offset separating batch draws from weight initialization.
const BATCH_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub hidden_layers: usize,
    pub width: usize,
    /// Lid and wall loss terms (forward mode).
    pub boundary_losses: bool,
    /// Temperature data term.
    pub temperature_data: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8192,
            max_iterations: 24_000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 500,
            hidden_layers: 6,
            width: 32,
            boundary_losses: true,
            temperature_data: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Usage(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch size must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Usage("max_iterations must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Usage("Adam hyperparameters out of range".into()));
        }
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::Usage("network needs at least one hidden layer".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Usage("eval_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        architecture(self.hidden_layers, self.width)
    }

    fn objective(&self, mode: LossMode) -> Objective {
        match mode {
            LossMode::Forward => Objective { mode, boundary: self.boundary_losses, data_t: self.temperature_data },
            LossMode::Inverse => Objective { mode, boundary: false, data_t: self.temperature_data },
        }
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn from_moments(m: OptimizerMoments) -> Self {
        Adam { step: m.step, m: m.m, v: m.v }
    }

    pub fn moments(&self) -> OptimizerMoments {
        OptimizerMoments { step: self.step, m: self.m.clone(), v: self.v.clone() }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
        Ok(())
    }
}

/// Receives progress from a training run.
pub trait TrainObserver {
    fn on_eval(&mut self, _row: &HistoryRow) -> Result<()> {
        Ok(())
    }
    /// Called with the trainer state at each evaluation point.
    fn on_checkpoint(&mut self, _ck: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;
impl TrainObserver for NoObserver {}

/// Appends history rows to a CSV and rewrites a checkpoint file.
pub struct FileObserver {
    pub history: HistoryLog,
    pub checkpoint: PathBuf,
}

impl FileObserver {
    pub fn new(history: &Path, checkpoint: &Path) -> Result<Self> {
        Ok(FileObserver { history: HistoryLog::open(history)?, checkpoint: checkpoint.to_owned() })
    }
}

impl TrainObserver for FileObserver {
    fn on_eval(&mut self, row: &HistoryRow) -> Result<()> {
        self.history.append(row)
    }
    fn on_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        save_checkpoint(&self.checkpoint, ck)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub adam: Adam,
    /// Trained (ln Re, ln Pe); equal to the fixed values in forward mode.
    pub log_params: LogParams,
    pub iterations: usize,
    /// Full-set loss at each evaluation point.
    pub history: Vec<HistoryRow>,
    /// Mini-batch total at every iteration.
    pub batch_totals: Vec<f64>,
}

impl TrainOutcome {
    pub fn re(&self) -> f64 {
        self.log_params.re()
    }

    pub fn pe(&self) -> f64 {
        self.log_params.pe()
    }

    pub fn checkpoint(&self, mode: LossMode) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            moments: Some(self.adam.moments()),
            log_re_pe: (mode == LossMode::Inverse).then_some((self.log_params.log_re, self.log_params.log_pe)),
        }
    }

    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.history.last().map(|r| r.loss)
    }
}

/// Cycles through a shuffled index list, reshuffling at each wrap.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Sampler { order, cursor: 0 }
    }

    fn draw(&mut self, k: usize, rng: &mut ChaCha8Rng, out: &mut Vec<usize>) {
        out.clear();
        for _ in 0..k {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
    }
}

/// Per-term batch sizes proportional to term sizes, at least one point each.
pub fn term_batch_sizes(sizes: &[usize], batch_size: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if batch_size >= total {
        return sizes.to_vec();
    }
    sizes
        .iter()
        .map(|&n| if n == 0 { 0 } else { (batch_size * n / total).clamp(1, n) })
        .collect()
}

struct BatchDrawer {
    rng: ChaCha8Rng,
    samplers: Vec<Sampler>,
    sizes: Vec<usize>,
    full: bool,
    idx: Vec<usize>,
}

impl BatchDrawer {
    /// Terms: interior, initial, top, bottom, residual.
    fn new(set: &CollocationSet, obj: &Objective, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(BATCH_STREAM);
        let fwd = obj.mode == LossMode::Forward;
        let counts = [
            set.interior.len(),
            if fwd { set.initial.len() } else { 0 },
            if fwd && obj.boundary { set.top.len() } else { 0 },
            if fwd && obj.boundary { set.bottom.len() } else { 0 },
            set.residual.len(),
        ];
        let sizes = term_batch_sizes(&counts, batch_size);
        let full = sizes == counts;
        let samplers = counts.iter().map(|&n| Sampler::new(n, &mut rng)).collect();
        BatchDrawer { rng, samplers, sizes, full, idx: Vec::new() }
    }

    fn draw(&mut self, set: &CollocationSet, inverse: bool, out: &mut Batch) {
        macro_rules! take {
            ($term:expr, $src:expr, $dst:expr) => {{
                self.samplers[$term].draw(self.sizes[$term], &mut self.rng, &mut self.idx);
                $dst.clear();
                $dst.extend(self.idx.iter().map(|&i| $src[i]));
            }};
        }
        take!(0, set.interior, out.interior);
        out.velocity.clear();
        if inverse {
            let v = set.velocity.as_ref().expect("checked by caller");
            out.velocity.extend(self.idx.iter().map(|&i| v[i]));
        }
        take!(1, set.initial, out.initial);
        take!(2, set.top, out.top);
        take!(3, set.bottom, out.bottom);
        take!(4, set.residual, out.residual);
    }
}

/// What is being trained.
#[derive(Debug, Clone, Copy)]
enum Problem {
    Forward(NondimParams),
    Inverse { re: f64, pe: f64 },
}

/// Forward problem: velocity and pressure from temperature, initial and
/// boundary data at known Re and Pe. Interior velocity labels on `set`
/// are never read.
pub fn train_forward(
    set: &CollocationSet,
    nd: &NondimParams,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    train(set, Problem::Forward(nd.clone()), cfg, observer)
}

/// Inverse problem: network and (ln Re, ln Pe) fitted jointly to
/// temperature and velocity data.
pub fn train_inverse(
    set: &CollocationSet,
    cfg: &TrainConfig,
    guess: (f64, f64),
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let (re, pe) = guess;
    if !(re > 0.0 && pe > 0.0 && re.is_finite() && pe.is_finite()) {
        return Err(Error::Usage(format!("initial guess must be positive, got Re = {re}, Pe = {pe}")));
    }
    if !set.is_inverse_capable() {
        return Err(Error::Usage("inverse training needs a set with velocity labels".into()));
    }
    train(set, Problem::Inverse { re, pe }, cfg, observer)
}

/// Fresh network for `set` under `cfg`.
pub fn initial_params(set: &CollocationSet, cfg: &TrainConfig) -> Result<MlpParams> {
    let (lo, hi) = set.bounds();
    MlpParams::init(&cfg.layer_sizes(), cfg.seed)?.with_input_box(lo, hi)
}

fn train(set: &CollocationSet, problem: Problem, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    // a zero-iteration run is allowed here and returns the initial network
    TrainConfig { max_iterations: cfg.max_iterations.max(1), ..cfg.clone() }.validate()?;
    let (mode, mut logs) = match &problem {
        Problem::Forward(nd) => (LossMode::Forward, LogParams::from_nd(nd)),
        Problem::Inverse { re, pe } => (LossMode::Inverse, LogParams { log_re: re.ln(), log_pe: pe.ln() }),
    };
    let inverse = mode == LossMode::Inverse;
    let obj = cfg.objective(mode);
    let mut params = initial_params(set, cfg)?;
    let n = params.n_params();
    let mut adam = Adam::new(if inverse { n + 2 } else { n });
    let full = Batch::full(set, &obj);
    let mut drawer = BatchDrawer::new(set, &obj, cfg.batch_size, cfg.seed);
    let mut engine = LossEngine::new();
    let mut eval_engine = LossEngine::new();
    let mut batch = Batch::default();
    let mut grad = Gradients::zeros(n);
    let mut step_vec = vec![0.0; adam.m.len()];
    let mut grad_vec = vec![0.0; adam.m.len()];
    let mut history = Vec::new();
    let mut batch_totals = Vec::with_capacity(cfg.max_iterations);
    let start = Instant::now();

    let mut log_eval = |it: usize, params: &MlpParams, logs: LogParams, adam: &Adam, history: &mut Vec<HistoryRow>| -> Result<()> {
        let loss = eval_engine.evaluate(params, &full, &obj, logs, None)?;
        if let Some(component) = loss.first_non_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, component });
        }
        let row = HistoryRow { iteration: it, loss, re: logs.re(), pe: logs.pe(), wall_seconds: start.elapsed().as_secs_f64() };
        observer.on_eval(&row)?;
        observer.on_checkpoint(&Checkpoint {
            params: params.clone(),
            moments: Some(adam.moments()),
            log_re_pe: inverse.then_some((logs.log_re, logs.log_pe)),
        })?;
        history.push(row);
        Ok(())
    };

    log_eval(0, &params, logs, &adam, &mut history)?;
    for it in 0..cfg.max_iterations {
        let b = if drawer.full {
            &full
        } else {
            drawer.draw(set, inverse, &mut batch);
            &batch
        };
        grad.params.fill(0.0);
        grad.log_re = 0.0;
        grad.log_pe = 0.0;
        let loss = engine.evaluate(&params, b, &obj, logs, Some(&mut grad))?;
        if let Some(component) = loss.first_non_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, component });
        }
        if grad.params.iter().any(|g| !g.is_finite()) || !grad.log_re.is_finite() || !grad.log_pe.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, component: "gradient" });
        }
        batch_totals.push(loss.total);

        step_vec[..n].copy_from_slice(params.flat());
        grad_vec[..n].copy_from_slice(&grad.params);
        if inverse {
            step_vec[n] = logs.log_re;
            step_vec[n + 1] = logs.log_pe;
            grad_vec[n] = grad.log_re;
            grad_vec[n + 1] = grad.log_pe;
        }
        adam.update(&mut step_vec, &grad_vec, cfg)?;
        params.flat_mut().copy_from_slice(&step_vec[..n]);
        if inverse {
            logs = LogParams { log_re: step_vec[n], log_pe: step_vec[n + 1] };
            let (re, pe) = (logs.re(), logs.pe());
            let ok = |x: f64| x.is_finite() && x >= PARAM_RANGE.0 && x <= PARAM_RANGE.1;
            if !ok(re) || !ok(pe) {
                return Err(Error::ParameterCollapse { iteration: it + 1, re, pe });
            }
        }
        let done = it + 1;
        if done % cfg.eval_every == 0 || done == cfg.max_iterations {
            log_eval(done, &params, logs, &adam, &mut history)?;
        }
    }
    Ok(TrainOutcome { params, adam, log_params: logs, iterations: cfg.max_iterations, history, batch_totals })
}

/// Whether the `window`-iteration block means of `totals` are
/// non-increasing (within relative slack `tol`) over the last `fraction`
/// of the run.
pub fn moving_average_non_increasing(totals: &[f64], window: usize, fraction: f64, tol: f64) -> bool {
    let start = ((1.0 - fraction) * totals.len() as f64).floor() as usize;
    let tail = &totals[start..];
    let means: Vec<f64> = tail.chunks_exact(window).map(|c| c.iter().sum::<f64>() / window as f64).collect();
    means.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(3);
        adam.m = vec![1.0, -1.0, 0.5];
        adam.v = vec![1.0, 1.0, 1.0];
        let mut p = vec![0.5, 0.25, -1.0];
        let before = p.clone();
        adam.update(&mut p, &[0.0; 3], &cfg).unwrap();
        assert_eq!(adam.m, vec![0.9, -0.9, 0.45]);
        assert!(adam.v.iter().all(|&v| v < 1.0));
        // moments still push the parameters; a fresh optimizer does not
        let mut fresh = Adam::new(3);
        let mut q = before.clone();
        fresh.update(&mut q, &[0.0; 3], &cfg).unwrap();
        assert_eq!(q, before);
        assert_ne!(p, before);
    }

    #[test]
    fn adam_constant_gradient_descends() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..100 {
            adam.update(&mut p, &[2.0, -0.5], &cfg).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
        // bias correction makes early steps close to lr in magnitude
        assert!((p[0] + 0.1).abs() < 1e-3, "{}", p[0]);
        assert!(adam.update(&mut p, &[1.0], &cfg).is_err());
    }

    #[test]
    fn first_adam_step_is_learning_rate_sized() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(1);
        let mut p = vec![1.0];
        adam.update(&mut p, &[3.7], &cfg).unwrap();
        // mhat = g, vhat = g², step = lr · g / (|g| + eps)
        let expected = 1.0 - 1e-3 * 3.7 / (3.7 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn proportional_batches() {
        assert_eq!(term_batch_sizes(&[100, 10, 50, 40], 1000), vec![100, 10, 50, 40]);
        assert_eq!(term_batch_sizes(&[100, 10, 50, 40], 100), vec![50, 5, 25, 20]);
        assert_eq!(term_batch_sizes(&[1000, 1, 0], 10), vec![9, 1, 0]);
    }

    #[test]
    fn sampler_covers_every_index_per_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = Sampler::new(10, &mut rng);
        let mut out = Vec::new();
        let mut seen = Vec::new();
        for _ in 0..5 {
            s.draw(4, &mut rng, &mut out);
            seen.extend_from_slice(&out);
        }
        let mut first: Vec<usize> = seen[..10].to_vec();
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
        let c: TrainConfig = toml::from_str("learning_rate = 0.01\nwidth = 50\nhidden_layers = 10").unwrap();
        assert_eq!((c.width, c.hidden_layers, c.batch_size), (50, 10, 8192));
    }

    #[test]
    fn moving_average_check() {
        let down: Vec<f64> = (0..2000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert!(moving_average_non_increasing(&down, 100, 0.8, 0.0));
        let mut up = down.clone();
        for v in &mut up[1500..] {
            *v *= 10.0;
        }
        assert!(!moving_average_non_increasing(&up, 100, 0.8, 0.0));
    }
}
