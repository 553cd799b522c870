//! Learnable parameters: per-unit weights, the stacked agent's full
//! parameter set, initialization, parameter counting/matching, and a
//! text checkpoint format with bit-exact round-trips.

use crate::cell::CellConfig;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Matrix;
use std::io::{BufRead, Write};

/// All learnable weights of one unit. Biases are stored as `n x 1`
/// matrices so every parameter tensor has a uniform type.
#[derive(Debug, Clone, PartialEq)]
pub struct RiiuParams {
    /// Input mix, `h_dim x in_dim`.
    pub w_x: Matrix,
    /// Recurrent mix, `h_dim x h_dim`.
    pub w_h: Matrix,
    /// Workspace mix, `h_dim x h_dim`.
    pub w_b: Matrix,
    /// Reflexive net layer 1, `2*mu_dim x (h_dim + mu_dim + h_dim)`:
    /// the input is `[h; mu; grad_phi]`.
    pub g_w1: Matrix,
    pub g_b1: Matrix,
    /// Reflexive net layer 2, `mu_dim x 2*mu_dim`.
    pub g_w2: Matrix,
    pub g_b2: Matrix,
    /// Broadcast projection, `h_dim x (h_dim + mu_dim + 1)`.
    pub w_o: Matrix,
}

/// Identifies one parameter tensor inside a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Wx,
    Wh,
    Wb,
    Gw1,
    Gb1,
    Gw2,
    Gb2,
    Wo,
}

pub const PARAM_SLOTS: [ParamSlot; 8] = [
    ParamSlot::Wx,
    ParamSlot::Wh,
    ParamSlot::Wb,
    ParamSlot::Gw1,
    ParamSlot::Gb1,
    ParamSlot::Gw2,
    ParamSlot::Gb2,
    ParamSlot::Wo,
];

impl ParamSlot {
    pub fn name(self) -> &'static str {
        match self {
            ParamSlot::Wx => "w_x",
            ParamSlot::Wh => "w_h",
            ParamSlot::Wb => "w_b",
            ParamSlot::Gw1 => "g_w1",
            ParamSlot::Gb1 => "g_b1",
            ParamSlot::Gw2 => "g_w2",
            ParamSlot::Gb2 => "g_b2",
            ParamSlot::Wo => "w_o",
        }
    }
}

impl RiiuParams {
    /// Initialize each weight uniformly in `+-1/sqrt(fan_in)`; biases
    /// are zero. Fan-in is the column count of the matrix.
    pub fn init(rng: &mut RngStream, cfg: &CellConfig) -> Self {
        let (h, mu, inp) = (cfg.h_dim, cfg.mu_dim, cfg.in_dim);
        let g_in = h + mu + h;
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.range(-bound, bound))
        };
        Self {
            w_x: uniform(h, inp),
            w_h: uniform(h, h),
            w_b: uniform(h, h),
            g_w1: uniform(2 * mu, g_in),
            g_b1: Matrix::zeros(2 * mu, 1),
            g_w2: uniform(mu, 2 * mu),
            g_b2: Matrix::zeros(mu, 1),
            w_o: uniform(h, h + mu + 1),
        }
    }

    pub fn zeros(cfg: &CellConfig) -> Self {
        let (h, mu, inp) = (cfg.h_dim, cfg.mu_dim, cfg.in_dim);
        let g_in = h + mu + h;
        Self {
            w_x: Matrix::zeros(h, inp),
            w_h: Matrix::zeros(h, h),
            w_b: Matrix::zeros(h, h),
            g_w1: Matrix::zeros(2 * mu, g_in),
            g_b1: Matrix::zeros(2 * mu, 1),
            g_w2: Matrix::zeros(mu, 2 * mu),
            g_b2: Matrix::zeros(mu, 1),
            w_o: Matrix::zeros(h, h + mu + 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_x: Matrix::zeros(self.w_x.rows(), self.w_x.cols()),
            w_h: Matrix::zeros(self.w_h.rows(), self.w_h.cols()),
            w_b: Matrix::zeros(self.w_b.rows(), self.w_b.cols()),
            g_w1: Matrix::zeros(self.g_w1.rows(), self.g_w1.cols()),
            g_b1: Matrix::zeros(self.g_b1.rows(), self.g_b1.cols()),
            g_w2: Matrix::zeros(self.g_w2.rows(), self.g_w2.cols()),
            g_b2: Matrix::zeros(self.g_b2.rows(), self.g_b2.cols()),
            w_o: Matrix::zeros(self.w_o.rows(), self.w_o.cols()),
        }
    }

    pub fn slot(&self, s: ParamSlot) -> &Matrix {
        match s {
            ParamSlot::Wx => &self.w_x,
            ParamSlot::Wh => &self.w_h,
            ParamSlot::Wb => &self.w_b,
            ParamSlot::Gw1 => &self.g_w1,
            ParamSlot::Gb1 => &self.g_b1,
            ParamSlot::Gw2 => &self.g_w2,
            ParamSlot::Gb2 => &self.g_b2,
            ParamSlot::Wo => &self.w_o,
        }
    }

    pub fn slot_mut(&mut self, s: ParamSlot) -> &mut Matrix {
        match s {
            ParamSlot::Wx => &mut self.w_x,
            ParamSlot::Wh => &mut self.w_h,
            ParamSlot::Wb => &mut self.w_b,
            ParamSlot::Gw1 => &mut self.g_w1,
            ParamSlot::Gb1 => &mut self.g_b1,
            ParamSlot::Gw2 => &mut self.g_w2,
            ParamSlot::Gb2 => &mut self.g_b2,
            ParamSlot::Wo => &mut self.w_o,
        }
    }

    pub fn param_count(&self) -> usize {
        PARAM_SLOTS
            .iter()
            .map(|&s| {
                let m = self.slot(s);
                m.rows() * m.cols()
            })
            .sum()
    }
}

/// Total scalar parameter count of one unit.
pub fn param_count(params: &RiiuParams) -> usize {
    params.param_count()
}

/// Addresses one tensor in a [`StackParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Layer(usize, ParamSlot),
    Policy,
}

/// Parameters of the full stacked agent: one [`RiiuParams`] per layer
/// plus the linear policy head reading the last layer's broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    pub layers: Vec<RiiuParams>,
    /// `n_actions x h_dim`, no bias.
    pub policy: Matrix,
}

impl StackParams {
    pub fn tensor(&self, r: ParamRef) -> &Matrix {
        match r {
            ParamRef::Layer(l, s) => self.layers[l].slot(s),
            ParamRef::Policy => &self.policy,
        }
    }

    pub fn tensor_mut(&mut self, r: ParamRef) -> &mut Matrix {
        match r {
            ParamRef::Layer(l, s) => self.layers[l].slot_mut(s),
            ParamRef::Policy => &mut self.policy,
        }
    }

    pub fn refs(&self) -> Vec<ParamRef> {
        let mut out = Vec::with_capacity(self.layers.len() * PARAM_SLOTS.len() + 1);
        for l in 0..self.layers.len() {
            for &s in &PARAM_SLOTS {
                out.push(ParamRef::Layer(l, s));
            }
        }
        out.push(ParamRef::Policy);
        out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            policy: Matrix::zeros(self.policy.rows(), self.policy.cols()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum::<usize>()
            + self.policy.rows() * self.policy.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.refs().iter().all(|&r| self.tensor(r).is_finite())
    }
}

/// Two-hidden-layer perceptron widths whose parameter count lands
/// within 5% of `target`, if any. Counts use input 18, output 4, and
/// biases everywhere.
pub fn matched_mlp_config(target: usize) -> Result<Vec<usize>> {
    let count = |w: usize| 18 * w + w + w * w + w + 4 * w + 4;
    let mut best: Option<(usize, usize)> = None;
    for w in 1..=4096 {
        let c = count(w);
        let err = c.abs_diff(target);
        if best.map_or(true, |(_, e)| err < e) {
            best = Some((w, err));
        }
        if c > target * 2 {
            break;
        }
    }
    let (w, err) = best.ok_or(Error::NoMatch(target))?;
    if err as f64 > 0.05 * target as f64 {
        return Err(Error::NoMatch(target));
    }
    Ok(vec![w, w])
}

/// Hidden size for a gated recurrent baseline (three gates with biases,
/// input 18, plus a 4-way linear head) within 5% of `target`.
pub fn matched_gru_config(target: usize) -> Result<usize> {
    let count = |h: usize| 3 * (18 * h + h * h + h) + 4 * h;
    let mut best: Option<(usize, usize)> = None;
    for h in 1..=2048 {
        let c = count(h);
        let err = c.abs_diff(target);
        if best.map_or(true, |(_, e)| err < e) {
            best = Some((h, err));
        }
        if c > target * 2 {
            break;
        }
    }
    let (h, err) = best.ok_or(Error::NoMatch(target))?;
    if err as f64 > 0.05 * target as f64 {
        return Err(Error::NoMatch(target));
    }
    Ok(h)
}

const CHECKPOINT_MAGIC: &str = "riiu-checkpoint v1";

/// Write a checkpoint. Values are printed with Rust's shortest
/// round-trip float formatting, so loading reproduces every bit.
pub fn save_checkpoint<W: Write>(params: &StackParams, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "layers {}", params.layers.len())?;
    for (l, layer) in params.layers.iter().enumerate() {
        for &s in &PARAM_SLOTS {
            let m = layer.slot(s);
            writeln!(w, "tensor layer{l}.{} {} {}", s.name(), m.rows(), m.cols())?;
            write_matrix(&mut w, m)?;
        }
    }
    writeln!(
        w,
        "tensor policy {} {}",
        params.policy.rows(),
        params.policy.cols()
    )?;
    write_matrix(&mut w, &params.policy)?;
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> std::io::Result<()> {
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<R: BufRead>(r: R) -> Result<StackParams> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::BadCheckpoint("unexpected end of file".into()))?
            .map_err(|e| Error::BadCheckpoint(e.to_string()))
    };
    if next()? != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpoint("bad magic line".into()));
    }
    let header = next()?;
    let n_layers: usize = header
        .strip_prefix("layers ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::BadCheckpoint("bad layers line".into()))?;

    let mut read_tensor = |expect: &str| -> Result<Matrix> {
        let head = next()?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(Error::BadCheckpoint(format!(
                "expected tensor line, got {head}"
            )));
        }
        let name = parts
            .next()
            .ok_or_else(|| Error::BadCheckpoint("missing tensor name".into()))?;
        if name != expect {
            return Err(Error::BadCheckpoint(format!(
                "expected tensor {expect}, got {name}"
            )));
        }
        let rows: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::BadCheckpoint("bad rows".into()))?;
        let cols: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::BadCheckpoint("bad cols".into()))?;
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let line = next()?;
            let mut vals = line.split_whitespace();
            for j in 0..cols {
                let v: f64 = vals
                    .next()
                    .ok_or_else(|| Error::BadCheckpoint("short row".into()))?
                    .parse()
                    .map_err(|_| Error::BadCheckpoint("bad float".into()))?;
                m.set(i, j, v);
            }
            if vals.next().is_some() {
                return Err(Error::BadCheckpoint("long row".into()));
            }
        }
        Ok(m)
    };

    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let mut tensors = Vec::with_capacity(PARAM_SLOTS.len());
        for &s in &PARAM_SLOTS {
            tensors.push(read_tensor(&format!("layer{l}.{}", s.name()))?);
        }
        let mut it = tensors.into_iter();
        layers.push(RiiuParams {
            w_x: it.next().unwrap(),
            w_h: it.next().unwrap(),
            w_b: it.next().unwrap(),
            g_w1: it.next().unwrap(),
            g_b1: it.next().unwrap(),
            g_w2: it.next().unwrap(),
            g_b2: it.next().unwrap(),
            w_o: it.next().unwrap(),
        });
    }
    let policy = read_tensor("policy")?;
    Ok(StackParams { layers, policy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::CellConfig;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = CellConfig::standard(18);
        let a = RiiuParams::init(&mut RngStream::new(5), &cfg);
        let b = RiiuParams::init(&mut RngStream::new(5), &cfg);
        assert_eq!(a, b);
        for &s in &PARAM_SLOTS {
            let m = a.slot(s);
            let bound = 1.0 / (m.cols() as f64).sqrt();
            for &x in m.as_slice() {
                assert!(x.abs() <= bound);
            }
        }
    }

    #[test]
    fn init_mean_near_zero() {
        // 1e5+ draws from one tensor family; uniform(-a, a) has sd
        // a/sqrt(3), so the sample mean should sit within 3 sigma.
        let cfg = CellConfig::standard(18);
        let mut rng = RngStream::new(6);
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut bound = 0.0;
        while count < 100_000 {
            let p = RiiuParams::init(&mut rng, &cfg);
            bound = 1.0 / (p.w_h.cols() as f64).sqrt();
            sum += p.w_h.as_slice().iter().sum::<f64>();
            count += p.w_h.as_slice().len();
        }
        let mean = sum / count as f64;
        let sigma_mean = bound / (3.0 * count as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sigma_mean, "mean {mean} vs {sigma_mean}");
    }

    #[test]
    fn unit_param_count_matches_shape_arithmetic() {
        let cfg = CellConfig::standard(18);
        let p = RiiuParams::init(&mut RngStream::new(1), &cfg);
        // 32*18 + 32*32 + 32*32 + 32*80 + 32 + 16*32 + 16 + 32*49
        let expect = 576 + 1024 + 1024 + 2560 + 32 + 512 + 16 + 1568;
        assert_eq!(p.param_count(), expect);
        assert_eq!(param_count(&p), expect);
    }

    #[test]
    fn matched_configs_within_five_percent() {
        let target = 30_720;
        let widths = matched_mlp_config(target).unwrap();
        let w = widths[0];
        let c = 18 * w + w + w * w + w + 4 * w + 4;
        assert!((c.abs_diff(target)) as f64 <= 0.05 * target as f64);

        let h = matched_gru_config(target).unwrap();
        let c = 3 * (18 * h + h * h + h) + 4 * h;
        assert!((c.abs_diff(target)) as f64 <= 0.05 * target as f64);
    }

    #[test]
    fn degenerate_target_is_rejected() {
        assert!(matches!(matched_mlp_config(1), Err(Error::NoMatch(1))));
        assert!(matches!(matched_gru_config(1), Err(Error::NoMatch(1))));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let cfg = CellConfig::standard(18);
        let mut rng = RngStream::new(9);
        let params = StackParams {
            layers: vec![
                RiiuParams::init(&mut rng, &cfg),
                RiiuParams::init(&mut rng, &CellConfig::standard(32)),
            ],
            policy: Matrix::from_fn(4, 32, |_, _| rng.normal()),
        };
        let mut buf = Vec::new();
        save_checkpoint(&params, &mut buf).unwrap();
        let loaded = load_checkpoint(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let cfg = CellConfig::standard(18);
        let params = StackParams {
            layers: vec![RiiuParams::init(&mut RngStream::new(2), &cfg)],
            policy: Matrix::zeros(4, 32),
        };
        let mut buf = Vec::new();
        save_checkpoint(&params, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(load_checkpoint(std::io::BufReader::new(buf.as_slice())).is_err());
    }
}
