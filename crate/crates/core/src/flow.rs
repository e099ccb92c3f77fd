//! Linear interpolation path, geometric time grids, the clipped velocity
//! model, the flow-matching training objective, and the training loop.
//!
//! The path is `X_t = t X_1 + (1-t) X_0` with a standard Gaussian source.
//! A model `u(x, t)` is fit by minimizing the mean squared residual against
//! `x_1 - x_0` over sampled pairs and times, stopping the time range at
//! `1 - t_lower` to avoid the terminal blow-up of the true field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{self, AdamW, Gradients, MlpNet, TimeEmbedding};
use crate::rng::{chacha, derive_seed, normal_vec, uniform, Chacha};
use crate::scalar::Scalar;

/// Appends the time features for `t` to `out`.
fn append_embedding<F: Scalar>(embedding: &TimeEmbedding<F>, t: F, out: &mut Vec<F>) {
    let start = out.len();
    out.resize(start + embedding.dim(), F::zero());
    embedding.embed_into(t, &mut out[start..]);
}

/// Point on the interpolation path: `t*x1 + (1-t)*x0`.
///
/// Panics on dimension mismatch.
pub fn interpolate<F: Scalar>(x0: &[F], x1: &[F], t: F) -> Vec<F> {
    assert_eq!(x0.len(), x1.len(), "interpolate endpoints differ in dimension");
    x0.iter()
        .zip(x1)
        .map(|(a, b)| t.mul_add(*b - *a, *a))
        .collect()
}

/// Strictly decreasing knots `1 = t_0 > t_1 > ... > t_K = t_lower > 0` with
/// consecutive ratios in (1, 2]. Slab `k` covers sample times
/// `[1 - t_k, 1 - t_{k+1})`, left-closed; the slabs partition
/// `[0, 1 - t_lower)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<F> {
    knots: Vec<F>,
    /// Knot index nearest to the bias-variance boundary value, when one was
    /// requested at construction.
    t_b_index: Option<usize>,
}

impl<F: Scalar> TimeGrid<F> {
    /// Validates the knot invariants: first knot exactly 1, strictly
    /// decreasing, final knot positive, all consecutive ratios in (1, 2]
    /// (with 1e-9 slack on the upper bound).
    pub fn new(knots: Vec<F>, t_b_index: Option<usize>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("time grid needs at least two knots".to_string()));
        }
        if knots[0] != F::one() {
            return Err(Error::invalid(format!("first knot must be 1, got {}", knots[0])));
        }
        let last = knots[knots.len() - 1];
        if !(last > F::zero()) || !last.is_finite() {
            return Err(Error::invalid(format!("final knot must be positive, got {last}")));
        }
        let cap = F::from_f64(2.0 + 1e-9);
        for k in 1..knots.len() {
            let ratio = knots[k - 1] / knots[k];
            if !(ratio > F::one()) {
                return Err(Error::invalid(format!(
                    "knots must strictly decrease (knot {k}: ratio {ratio})"
                )));
            }
            if ratio > cap {
                return Err(Error::invalid(format!(
                    "knot ratio {ratio} at index {k} exceeds 2"
                )));
            }
        }
        if let Some(i) = t_b_index {
            if i >= knots.len() {
                return Err(Error::invalid(format!("t_b marker {i} out of range")));
            }
        }
        Ok(TimeGrid { knots, t_b_index })
    }

    /// Geometric descent from 1 by `ratio`, last knot snapped to `t_lower`.
    /// The snap keeps the final ratio within (1, 2] because the previous
    /// knot is at most `ratio * t_lower`.
    pub fn geometric(t_lower: F, ratio: F) -> Result<Self> {
        if !(t_lower > F::zero()) || !(t_lower < F::one()) || !t_lower.is_finite() {
            return Err(Error::invalid(format!("t_lower must lie in (0, 1), got {t_lower}")));
        }
        if !(ratio > F::one()) || ratio > F::from_usize(2) {
            return Err(Error::invalid(format!("ratio must lie in (1, 2], got {ratio}")));
        }
        let snap = t_lower * F::from_f64(1.0 + 1e-12);
        let mut knots = vec![F::one()];
        loop {
            let next = *knots.last().unwrap() / ratio;
            if next <= snap {
                break;
            }
            knots.push(next);
        }
        knots.push(t_lower);
        TimeGrid::new(knots, None)
    }

    pub fn knots(&self) -> &[F] {
        &self.knots
    }

    pub fn t_lower(&self) -> F {
        self.knots[self.knots.len() - 1]
    }

    pub fn slab_count(&self) -> usize {
        self.knots.len() - 1
    }

    /// Sample-time interval of slab `k`: `[1 - t_k, 1 - t_{k+1})`.
    pub fn slab_bounds(&self, k: usize) -> (F, F) {
        assert!(k < self.slab_count(), "slab index out of range");
        (F::one() - self.knots[k], F::one() - self.knots[k + 1])
    }

    /// Index of the slab containing sample time `t`, left-closed at each
    /// boundary; times at or past `1 - t_lower` clamp to the last slab and
    /// negative times to the first.
    pub fn slab_index(&self, t: F) -> usize {
        let idx = self.knots.partition_point(|kn| F::one() - *kn <= t);
        idx.saturating_sub(1).min(self.slab_count() - 1)
    }

    /// Knot value flagged as the bias-variance boundary, if recorded.
    pub fn t_b(&self) -> Option<F> {
        self.t_b_index.map(|i| self.knots[i])
    }

    pub fn t_b_index(&self) -> Option<usize> {
        self.t_b_index
    }
}

/// Early-stopping grid for `n` samples of smoothness `alpha` in ambient
/// dimension `d` with polynomial decay order `beta`:
/// `t_lower = n^(-beta/(2 alpha + d)) * ln(n)^(beta+1)`, clamped into
/// (0, 0.5]; knots descend geometrically by `ratio` from 1 and snap to
/// `t_lower`. The value `n^(-2/(2 alpha + d))` marks the knot nearest the
/// bias-variance boundary.
pub fn build_time_grid<F: Scalar>(
    n: usize,
    alpha: F,
    d: usize,
    beta: F,
    ratio: F,
) -> Result<TimeGrid<F>> {
    if n < 2 {
        return Err(Error::invalid(format!("time grid needs n >= 2, got {n}")));
    }
    if !(alpha >= F::zero()) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    if d < 3 {
        return Err(Error::invalid(format!("time grid needs d >= 3, got {d}")));
    }
    if !(beta >= F::from_usize(2)) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be >= 2, got {beta}")));
    }
    let nf = F::from_usize(n);
    let denom = F::from_usize(2) * alpha + F::from_usize(d);
    let raw = nf.powf(-beta / denom) * nf.ln().powf(beta + F::one());
    if !raw.is_finite() || !(raw > F::zero()) {
        return Err(Error::invalid(format!("degenerate early-stopping level {raw}")));
    }
    let t_lower = raw.min(F::from_f64(0.5));
    let mut grid = TimeGrid::geometric(t_lower, ratio)?;
    let boundary = nf.powf(-F::from_usize(2) / denom);
    let mut best = 0;
    for (i, k) in grid.knots.iter().enumerate() {
        if (*k - boundary).abs() < (grid.knots[best] - boundary).abs() {
            best = i;
        }
    }
    grid.t_b_index = Some(best);
    Ok(grid)
}

/// Learning-rate schedule over optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to zero over `t_max` steps.
    Cosine { t_max: usize },
}

/// How training times are drawn each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeSampling {
    /// One `t ~ Unif[0, 1 - t_lower]` per pair.
    Uniform,
    /// Pair `j` draws its time uniformly inside grid slab `j mod K`,
    /// guaranteeing every slab is visited when the batch covers the grid.
    Stratified,
}

/// Velocity-model architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    /// One network over the whole time range.
    Single,
    /// One network per grid slab, dispatched by evaluation time.
    Piecewise,
}

/// Source-sample policy during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    /// Fresh source draw per pair per iteration (the source law is known).
    Fresh,
    /// A source pool of the training size drawn once up front; pair `j`
    /// always couples target row `j` with pool row `j`, reproducing a fixed
    /// empirical objective exactly.
    Fixed,
}

/// Parameters of the early-stopping grid, when a run requests one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub alpha: f64,
    pub d: usize,
    pub beta: f64,
    pub ratio: f64,
}

/// Training hyperparameters, readable from TOML. Every field has a default
/// so partial files parse; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Target rows to train on; 0 means all provided rows.
    pub n_target_samples: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    /// Hidden-layer width.
    pub width: usize,
    /// Hidden-layer count.
    pub depth: usize,
    /// Time-feature dimension: 1 feeds the raw time value, an even value
    /// >= 2 selects a sinusoidal ladder of that width. Wide ladders dilute
    /// the spatial channels and can stall short training runs, so the
    /// sphere/torus presets use 1.
    pub time_embedding_dim: usize,
    /// Early-stopping level: training times stay in [0, 1 - t_lower].
    /// Overridden by the built grid's level when `time_grid` is set.
    pub t_lower: f64,
    pub t_sampling: TimeSampling,
    pub model: ModelMode,
    /// Constant in the sup-norm cap `clip * sqrt(ln n) / (1 - t)`.
    pub clip_constant: f64,
    pub source: SourceMode,
    /// With replacement (default) any batch size works; without it the
    /// batch must fit in the training set.
    pub sample_with_replacement: bool,
    /// Required for stratified sampling and piecewise mode; the grid is
    /// built from the actual training-row count.
    pub time_grid: Option<GridParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            n_target_samples: 0,
            iterations: 1000,
            batch_size: 2048,
            learning_rate: 2e-4,
            weight_decay: 0.01,
            lr_schedule: LrSchedule::Constant,
            width: 256,
            depth: 4,
            time_embedding_dim: 64,
            t_lower: 1.6e-5,
            t_sampling: TimeSampling::Uniform,
            model: ModelMode::Single,
            clip_constant: 10.0,
            source: SourceMode::Fresh,
            sample_with_replacement: true,
            time_grid: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1".to_string()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if let LrSchedule::Cosine { t_max } = self.lr_schedule {
            if t_max == 0 {
                return Err(Error::invalid("cosine t_max must be >= 1".to_string()));
            }
        }
        if self.width < 1 || self.depth < 1 {
            return Err(Error::invalid("width and depth must be >= 1".to_string()));
        }
        if self.time_embedding_dim == 0
            || (self.time_embedding_dim != 1 && self.time_embedding_dim % 2 != 0)
        {
            return Err(Error::invalid(format!(
                "time_embedding_dim must be 1 (raw time) or even and >= 2, got {}",
                self.time_embedding_dim
            )));
        }
        if !(self.t_lower > 0.0 && self.t_lower < 1.0) {
            return Err(Error::invalid(format!(
                "t_lower must lie in (0, 1), got {}",
                self.t_lower
            )));
        }
        if !(self.clip_constant > 0.0) || !self.clip_constant.is_finite() {
            return Err(Error::invalid(format!(
                "clip_constant must be positive, got {}",
                self.clip_constant
            )));
        }
        let needs_grid =
            self.t_sampling == TimeSampling::Stratified || self.model == ModelMode::Piecewise;
        if needs_grid && self.time_grid.is_none() {
            return Err(Error::invalid(
                "stratified sampling and piecewise mode need a [time_grid] table".to_string(),
            ));
        }
        Ok(())
    }

    /// Stable hex digest of the serialized config, recorded in run records
    /// so artifacts can be matched to the exact settings that made them.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Neural velocity field with a hard sup-norm cap.
///
/// Input to each network is the spatial point followed by the sinusoidal
/// time features. Every evaluation clamps each output coordinate into
/// `[-cap(t), cap(t)]` with `cap(t) = clip_constant * sqrt(ln n) / (1 - t)`,
/// where `n` is the training-sample count.
#[derive(Debug, Clone)]
pub struct VelocityModel<F> {
    mode: ModelMode,
    nets: Vec<MlpNet<F>>,
    embedding: TimeEmbedding<F>,
    grid: Option<TimeGrid<F>>,
    clip_constant: F,
    n_train: usize,
    t_lower: F,
    clip_scale: F,
}

impl<F: Scalar> VelocityModel<F> {
    /// One network over the whole time range.
    pub fn single(
        net: MlpNet<F>,
        embedding: TimeEmbedding<F>,
        clip_constant: F,
        n_train: usize,
        t_lower: F,
    ) -> Result<Self> {
        Self::build(ModelMode::Single, vec![net], embedding, None, clip_constant, n_train, t_lower)
    }

    /// One network per slab of `grid`, dispatched by evaluation time.
    pub fn piecewise(
        nets: Vec<MlpNet<F>>,
        grid: TimeGrid<F>,
        embedding: TimeEmbedding<F>,
        clip_constant: F,
        n_train: usize,
    ) -> Result<Self> {
        if nets.len() != grid.slab_count() {
            return Err(Error::shape("piecewise nets", grid.slab_count(), nets.len()));
        }
        let t_lower = grid.t_lower();
        Self::build(
            ModelMode::Piecewise,
            nets,
            embedding,
            Some(grid),
            clip_constant,
            n_train,
            t_lower,
        )
    }

    fn build(
        mode: ModelMode,
        nets: Vec<MlpNet<F>>,
        embedding: TimeEmbedding<F>,
        grid: Option<TimeGrid<F>>,
        clip_constant: F,
        n_train: usize,
        t_lower: F,
    ) -> Result<Self> {
        if nets.is_empty() {
            return Err(Error::invalid("model needs at least one network".to_string()));
        }
        let dim = nets[0].output_dim();
        for (k, net) in nets.iter().enumerate() {
            if net.output_dim() != dim {
                return Err(Error::shape("net output dim", dim, net.output_dim()));
            }
            if net.input_dim() != dim + embedding.dim() {
                return Err(Error::invalid(format!(
                    "net {k} input dim {} != spatial {dim} + time features {}",
                    net.input_dim(),
                    embedding.dim()
                )));
            }
        }
        if !(clip_constant > F::zero()) || !clip_constant.is_finite() {
            return Err(Error::invalid(format!(
                "clip constant must be positive, got {clip_constant}"
            )));
        }
        if n_train < 2 {
            return Err(Error::invalid(format!(
                "clip cap needs n >= 2 training samples, got {n_train}"
            )));
        }
        if !(t_lower >= F::zero() && t_lower < F::one()) {
            return Err(Error::invalid(format!("t_lower must lie in [0, 1), got {t_lower}")));
        }
        let clip_scale = clip_constant * F::from_usize(n_train).ln().sqrt();
        Ok(VelocityModel {
            mode,
            nets,
            embedding,
            grid,
            clip_constant,
            n_train,
            t_lower,
            clip_scale,
        })
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    /// Spatial dimension.
    pub fn dim(&self) -> usize {
        self.nets[0].output_dim()
    }

    pub fn t_lower(&self) -> F {
        self.t_lower
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn clip_constant(&self) -> F {
        self.clip_constant
    }

    pub fn embedding(&self) -> &TimeEmbedding<F> {
        &self.embedding
    }

    pub fn grid(&self) -> Option<&TimeGrid<F>> {
        self.grid.as_ref()
    }

    pub fn nets(&self) -> &[MlpNet<F>] {
        &self.nets
    }

    /// Per-coordinate cap at time `t`; infinite when `t >= 1` so the clamp
    /// never manufactures a NaN.
    pub fn clip_cap(&self, t: F) -> F {
        let s = F::one() - t;
        if s > F::zero() {
            self.clip_scale / s
        } else {
            F::infinity()
        }
    }

    /// Index of the network consulted at time `t`.
    pub fn active_net_index(&self, t: F) -> usize {
        match self.mode {
            ModelMode::Single => 0,
            ModelMode::Piecewise => self.grid.as_ref().expect("piecewise grid").slab_index(t),
        }
    }

    fn input_row(&self, x: &[F], t: F) -> Vec<F> {
        let mut row = Vec::with_capacity(x.len() + self.embedding.dim());
        row.extend_from_slice(x);
        append_embedding(&self.embedding, t, &mut row);
        row
    }

    fn clamp_row(row: &mut [F], cap: F) {
        for c in row {
            if *c > cap {
                *c = cap;
            } else if *c < -cap {
                *c = -cap;
            }
        }
    }

    /// Clipped velocity at one point.
    pub fn velocity(&self, x: &[F], t: F) -> Vec<F> {
        assert_eq!(x.len(), self.dim(), "velocity point dimension mismatch");
        let input = self.input_row(x, t);
        let mut v = self.nets[self.active_net_index(t)].forward(&input);
        Self::clamp_row(&mut v, self.clip_cap(t));
        v
    }

    /// Clipped velocity for a batch sharing one time (one network applies).
    pub fn velocity_batch(&self, xs: &Matrix<F>, t: F) -> Matrix<F> {
        assert_eq!(xs.cols(), self.dim(), "velocity batch dimension mismatch");
        let emb = self.embedding.embed(t);
        let mut flat = Vec::with_capacity(xs.rows() * (xs.cols() + emb.len()));
        for row in xs.iter_rows() {
            flat.extend_from_slice(row);
            flat.extend_from_slice(&emb);
        }
        let input = Matrix::from_flat(xs.rows(), xs.cols() + emb.len(), flat);
        let mut out = self.nets[self.active_net_index(t)].forward_batch(&input);
        let cap = self.clip_cap(t);
        for i in 0..out.rows() {
            Self::clamp_row(out.row_mut(i), cap);
        }
        out
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint<F> {
        let mut nets = self
            .nets
            .iter()
            .map(|n| nn::Checkpoint::from_net(n, &self.embedding));
        let primary = nets.next().expect("at least one net");
        ModelCheckpoint {
            primary,
            model: ModelMeta {
                mode: self.mode,
                clip_constant: self.clip_constant,
                n_train: self.n_train,
                t_lower: self.t_lower,
                grid: self.grid.clone(),
                slab_nets: nets.collect(),
            },
        }
    }

    pub fn from_checkpoint(ck: ModelCheckpoint<F>) -> Result<Self> {
        let meta = ck.model;
        let (first, embedding) = ck.primary.into_net()?;
        let mut nets = vec![first];
        for extra in meta.slab_nets {
            let (net, emb) = extra.into_net()?;
            if emb.dim() != embedding.dim() {
                return Err(Error::shape("slab net time features", embedding.dim(), emb.dim()));
            }
            nets.push(net);
        }
        match meta.mode {
            ModelMode::Single => {
                if nets.len() != 1 {
                    return Err(Error::shape("single-mode nets", 1, nets.len()));
                }
                VelocityModel::single(
                    nets.pop().expect("one net"),
                    embedding,
                    meta.clip_constant,
                    meta.n_train,
                    meta.t_lower,
                )
            }
            ModelMode::Piecewise => {
                let grid = meta
                    .grid
                    .ok_or_else(|| Error::invalid("piecewise checkpoint lacks a grid".to_string()))?;
                VelocityModel::piecewise(nets, grid, embedding, meta.clip_constant, meta.n_train)
            }
        }
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: ModelCheckpoint<F> = serde_json::from_reader(file)?;
        VelocityModel::from_checkpoint(ck)
    }
}

/// Serialized form of a [`VelocityModel`]: the first network's checkpoint
/// is inlined so a single-mode file doubles as a plain net checkpoint, and
/// model-level settings ride alongside.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ModelCheckpoint<F> {
    #[serde(flatten)]
    pub primary: nn::Checkpoint<F>,
    pub model: ModelMeta<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ModelMeta<F> {
    pub mode: ModelMode,
    pub clip_constant: F,
    pub n_train: usize,
    pub t_lower: F,
    pub grid: Option<TimeGrid<F>>,
    /// Networks for slabs 1.. in piecewise mode; empty otherwise.
    pub slab_nets: Vec<nn::Checkpoint<F>>,
}

/// Mean squared flow-matching residual over a batch and its parameter
/// gradients, one [`Gradients`] per network in the model.
///
/// Loss: `(1/m) * sum_j |u(x_{t_j}, t_j) - (x1_j - x0_j)|^2` with the
/// model's clip applied; coordinates the clip saturates contribute their
/// clipped value to the loss and zero to the gradient.
pub fn fm_loss_and_grads<F: Scalar>(
    model: &VelocityModel<F>,
    x0s: &Matrix<F>,
    x1s: &Matrix<F>,
    times: &[F],
) -> Result<(F, Vec<Gradients<F>>)> {
    let m = x0s.rows();
    if m == 0 {
        return Err(Error::invalid("loss needs at least one pair".to_string()));
    }
    if x1s.rows() != m || times.len() != m {
        return Err(Error::shape("pairs and times", m, x1s.rows().min(times.len())));
    }
    let dim = model.dim();
    if x0s.cols() != dim || x1s.cols() != dim {
        return Err(Error::shape("pair dimension", dim, x0s.cols().max(x1s.cols())));
    }
    let hi = F::one() - model.t_lower();
    for (j, t) in times.iter().enumerate() {
        if !(*t >= F::zero() && *t <= hi) {
            return Err(Error::invalid(format!(
                "pair {j}: t = {t} outside [0, {hi}]"
            )));
        }
    }

    // Group pairs by the network their time dispatches to.
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); model.nets().len()];
    for (j, t) in times.iter().enumerate() {
        groups[model.active_net_index(*t)].push(j);
    }

    let inv_m = F::one() / F::from_usize(m);
    let two = F::from_usize(2);
    let mut loss = F::zero();
    let mut all_grads: Vec<Gradients<F>> = Vec::with_capacity(model.nets().len());
    for (net, rows) in model.nets().iter().zip(&groups) {
        if rows.is_empty() {
            all_grads.push(Gradients::zeros_like(net));
            continue;
        }
        let width = dim + model.embedding().dim();
        let mut flat = Vec::with_capacity(rows.len() * width);
        for &j in rows {
            let xt = interpolate(x0s.row(j), x1s.row(j), times[j]);
            flat.extend_from_slice(&xt);
            append_embedding(model.embedding(), times[j], &mut flat);
        }
        let input = Matrix::from_flat(rows.len(), width, flat);
        let trace = net.forward_trace(&input);
        let out = trace.output();
        let mut upstream = Matrix::zeros(rows.len(), dim);
        for (local, &j) in rows.iter().enumerate() {
            let cap = model.clip_cap(times[j]);
            let x0 = x0s.row(j);
            let x1 = x1s.row(j);
            let o = out.row(local);
            let u = upstream.row_mut(local);
            for c in 0..dim {
                let raw = o[c];
                let clipped = raw.min(cap).max(-cap);
                let resid = clipped - (x1[c] - x0[c]);
                loss += resid * resid;
                if raw.abs() <= cap {
                    u[c] = two * inv_m * resid;
                }
            }
        }
        let (grads, _) = net.backward(&trace, &upstream);
        all_grads.push(grads);
    }
    Ok((loss * inv_m, all_grads))
}

/// One optimizer step's record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Training history: seed, config digest, and the full loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub steps: Vec<StepRecord>,
    pub final_loss: Option<f64>,
}

impl RunRecord {
    /// CSV `step,loss,lr` with a header line, full float precision.
    pub fn write_loss_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,loss,lr")?;
        for s in &self.steps {
            writeln!(out, "{},{},{}", s.step, s.loss, s.lr)?;
        }
        Ok(())
    }
}

/// Standard-normal source draw; the default `source_sampler` for [`train`].
pub fn gaussian_source<F: Scalar>(rng: &mut Chacha, dim: usize) -> Vec<F> {
    normal_vec(rng, dim)
}

/// Trains a velocity model on target rows by stochastic flow matching.
///
/// Each iteration draws batch indices, source points (fresh via
/// `source_sampler`, or from a fixed pool coupled row-to-row in
/// [`SourceMode::Fixed`]), and one time per pair, then takes one AdamW step
/// per network. Networks whose slab receives no pairs in an iteration still
/// step with zero gradients, so weight decay and moment decay advance
/// deterministically. Draw order per iteration is fixed: indices, then
/// sources, then times.
///
/// `n_target_samples` limits training to the first rows of `targets`;
/// iterations may be 0, returning the freshly initialized model.
pub fn train<F: Scalar>(
    config: &TrainConfig,
    targets: &Matrix<F>,
    mut source_sampler: impl FnMut(&mut Chacha, usize) -> Vec<F>,
) -> Result<(VelocityModel<F>, RunRecord)> {
    config.validate()?;
    if targets.rows() == 0 {
        return Err(Error::invalid("training needs at least one target row".to_string()));
    }
    if !targets.all_finite() {
        return Err(Error::invalid("target rows must be finite".to_string()));
    }
    let n = if config.n_target_samples == 0 {
        targets.rows()
    } else {
        if targets.rows() < config.n_target_samples {
            return Err(Error::shape(
                "target rows",
                config.n_target_samples,
                targets.rows(),
            ));
        }
        config.n_target_samples
    };
    if n < 2 {
        return Err(Error::invalid(format!("training needs n >= 2 rows, got {n}")));
    }
    if !config.sample_with_replacement && config.batch_size > n {
        return Err(Error::invalid(format!(
            "batch {} exceeds {n} rows without replacement",
            config.batch_size
        )));
    }
    let dim = targets.cols();
    let grid = match &config.time_grid {
        Some(p) => Some(build_time_grid(
            n,
            F::from_f64(p.alpha),
            p.d,
            F::from_f64(p.beta),
            F::from_f64(p.ratio),
        )?),
        None => None,
    };
    let t_lower = grid
        .as_ref()
        .map(|g| g.t_lower())
        .unwrap_or_else(|| F::from_f64(config.t_lower));
    let embedding: TimeEmbedding<F> = TimeEmbedding::new(config.time_embedding_dim)?;
    let mut layer_dims = Vec::with_capacity(config.depth + 2);
    layer_dims.push(dim + embedding.dim());
    layer_dims.extend(std::iter::repeat(config.width).take(config.depth));
    layer_dims.push(dim);

    let net_count = match config.model {
        ModelMode::Single => 1,
        ModelMode::Piecewise => grid.as_ref().expect("validated").slab_count(),
    };
    let nets: Vec<MlpNet<F>> = (0..net_count)
        .map(|k| MlpNet::he_uniform(&layer_dims, derive_seed(config.seed, "net", k as u64)))
        .collect::<Result<_>>()?;
    let clip = F::from_f64(config.clip_constant);
    let model = match config.model {
        ModelMode::Single => {
            let net = nets.into_iter().next().expect("one net");
            VelocityModel::single(net, embedding, clip, n, t_lower)?
        }
        ModelMode::Piecewise => VelocityModel::piecewise(
            nets,
            grid.clone().expect("validated"),
            embedding,
            clip,
            n,
        )?,
    };
    let mut model = model;

    let pool: Option<Matrix<F>> = match config.source {
        SourceMode::Fresh => None,
        SourceMode::Fixed => {
            let mut rng = chacha(derive_seed(config.seed, "source-pool", 0));
            let mut flat = Vec::with_capacity(n * dim);
            for _ in 0..n {
                flat.extend(source_sampler(&mut rng, dim));
            }
            Some(Matrix::from_flat(n, dim, flat))
        }
    };

    let mut opts: Vec<AdamW<F>> = model
        .nets
        .iter()
        .map(|net| AdamW::new(net, F::from_f64(config.weight_decay)))
        .collect();
    let mut rng = chacha(derive_seed(config.seed, "train", 0));
    let base_lr = F::from_f64(config.learning_rate);
    let m = config.batch_size;
    let hi = F::one() - t_lower;
    let mut index_pool: Vec<usize> = (0..n).collect();
    let mut steps = Vec::with_capacity(config.iterations);

    for step in 0..config.iterations {
        use rand::Rng;
        let indices: Vec<usize> = if config.sample_with_replacement {
            (0..m).map(|_| rng.gen_range(0..n)).collect()
        } else {
            // Partial Fisher-Yates: the first m entries become a uniform
            // sample without replacement.
            for i in 0..m {
                let j = rng.gen_range(i..n);
                index_pool.swap(i, j);
            }
            index_pool[..m].to_vec()
        };
        let x1s = targets.gather(&indices);
        let x0s = match &pool {
            Some(p) => p.gather(&indices),
            None => {
                let mut flat = Vec::with_capacity(m * dim);
                for _ in 0..m {
                    flat.extend(source_sampler(&mut rng, dim));
                }
                Matrix::from_flat(m, dim, flat)
            }
        };
        let times: Vec<F> = match config.t_sampling {
            TimeSampling::Uniform => (0..m).map(|_| uniform(&mut rng, F::zero(), hi)).collect(),
            TimeSampling::Stratified => {
                let g = grid.as_ref().expect("validated");
                (0..m)
                    .map(|j| {
                        let (lo, s_hi) = g.slab_bounds(j % g.slab_count());
                        uniform(&mut rng, lo, s_hi)
                    })
                    .collect()
            }
        };
        let lr = match config.lr_schedule {
            LrSchedule::Constant => base_lr,
            LrSchedule::Cosine { t_max } => nn::cosine_lr(base_lr, step as u64, t_max as u64)?,
        };
        let (loss, grads) = fm_loss_and_grads(&model, &x0s, &x1s, &times)?;
        if !loss.is_finite() {
            return Err(Error::non_finite(format!("training loss (step {step})"), step));
        }
        for ((net, opt), g) in model.nets.iter_mut().zip(&mut opts).zip(&grads) {
            // Divergence can surface in the gradients before the loss; either
            // way the caller needs the step that failed.
            opt.step(net, g, lr).map_err(|e| match e {
                Error::NonFinite { context, .. } => {
                    Error::non_finite(format!("{context} (step {step})"), step)
                }
                other => other,
            })?;
        }
        steps.push(StepRecord {
            step,
            loss: loss.to_f64().unwrap_or(f64::NAN),
            lr: lr.to_f64().unwrap_or(f64::NAN),
        });
    }

    let record = RunRecord {
        seed: config.seed,
        config_hash: config.hash(),
        final_loss: steps.last().map(|s| s.loss),
        steps,
    };
    Ok((model, record))
}

/// Post-hoc spatial-regularity report: the Lipschitz-type constants are
/// documented reference values, never enforced in training; `rows` holds
/// the measured finite-difference ratios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport<F> {
    /// Exponent softening in the reference envelope `c / (1-t)^(1-xi)`.
    pub xi: F,
    /// Scale of the reference envelope.
    pub c_lip: F,
    /// `(t, max over probe pairs of |v(x+eps*u, t) - v(x, t)| / eps)`.
    pub rows: Vec<(F, F)>,
}

impl<F: Scalar> LipschitzReport<F> {
    /// Reference envelope value at `t`.
    pub fn envelope(&self, t: F) -> F {
        self.c_lip / (F::one() - t).powf(F::one() - self.xi)
    }
}

/// Measures the model's worst finite-difference velocity ratio at each
/// time over `n_pairs` random probe directions around Gaussian points.
pub fn lipschitz_probe<F: Scalar>(
    model: &VelocityModel<F>,
    ts: &[F],
    n_pairs: usize,
    eps: F,
    seed: u64,
    xi: F,
    c_lip: F,
) -> Result<LipschitzReport<F>> {
    if n_pairs < 1 || !(eps > F::zero()) {
        return Err(Error::invalid("probe needs n_pairs >= 1 and eps > 0".to_string()));
    }
    let dim = model.dim();
    let mut rng = chacha(seed);
    let mut rows = Vec::with_capacity(ts.len());
    for &t in ts {
        if !(t >= F::zero() && t < F::one()) {
            return Err(Error::invalid(format!("probe time {t} outside [0, 1)")));
        }
        let mut worst = F::zero();
        for _ in 0..n_pairs {
            let x: Vec<F> = normal_vec(&mut rng, dim);
            let u = crate::rng::unit_direction(&mut rng, dim);
            let shifted: Vec<F> = x.iter().zip(&u).map(|(a, b)| eps.mul_add(*b, *a)).collect();
            let va = model.velocity(&x, t);
            let vb = model.velocity(&shifted, t);
            let ratio = crate::linalg::dist_sq(&va, &vb).sqrt() / eps;
            if ratio > worst {
                worst = ratio;
            }
        }
        rows.push((t, worst));
    }
    Ok(LipschitzReport { xi, c_lip, rows })
}
