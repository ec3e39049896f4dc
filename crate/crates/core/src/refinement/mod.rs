//! Contrastive iterative refinement: the two depth maps, their uncertainties,
//! their disagreement and an image context are projected into an input
//! feature, a convolutional GRU keeps a hidden state over iterations, and a
//! pair of update heads emits additive depth corrections. The final depths are
//! upsampled and averaged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid};
use crate::tensor::{
    bilinear_resize_tensor, PointwiseWeights, SepConvVars, SepConvWeights, Shape, Tape, Tensor,
    Var,
};

/// Number of maps stacked into the projection: d1, d2, u1, u2, dif.
pub const STACKED_MAPS: usize = 5;

/// Depth floor applied after every additive update, in meters.
pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementConfig {
    pub proj_channels: usize,
    pub context_channels: usize,
    pub hidden_channels: usize,
    pub t_max: usize,
    pub min_depth: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            proj_channels: 16,
            context_channels: 16,
            hidden_channels: 32,
            t_max: 3,
            min_depth: DEFAULT_MIN_DEPTH,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proj_channels == 0 || self.hidden_channels == 0 {
            return Err(Error::Config("projection and hidden channels must be positive".into()));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if !(self.min_depth > 0.0) {
            return Err(Error::Config("min_depth must be positive".into()));
        }
        Ok(())
    }

    /// Channels of the GRU input `I^t`.
    pub fn input_channels(&self) -> usize {
        self.proj_channels + self.context_channels
    }
}

/// Update, reset and candidate convolutions, each over `[h, I]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub z: SepConvWeights,
    pub r: SepConvWeights,
    pub h: SepConvWeights,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub z: SepConvVars,
    pub r: SepConvVars,
    pub h: SepConvVars,
}

impl GruWeights {
    pub fn random(hidden: usize, input: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let c = hidden + input;
        GruWeights {
            z: SepConvWeights::random(c, hidden, gain, rng),
            r: SepConvWeights::random(c, hidden, gain, rng),
            h: SepConvWeights::random(c, hidden, gain, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> GruVars {
        GruVars { z: self.z.bind(tape), r: self.r.bind(tape), h: self.h.bind(tape) }
    }

    pub fn hidden_channels(&self) -> usize {
        self.z.out_channels()
    }
}

/// Every learnable tensor of the refinement engine.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementWeights {
    pub proj1: SepConvWeights,
    pub proj2: SepConvWeights,
    pub gru: GruWeights,
    pub head1: SepConvWeights,
    pub head2: SepConvWeights,
    /// 1x1 projection of the concatenated penultimate features when their
    /// channel count differs from the hidden size.
    pub init: Option<PointwiseWeights>,
}

/// Handles of [`RefinementWeights`] on a tape, in [`RefinementWeights::named`] order.
#[derive(Debug, Clone, Copy)]
pub struct RefinementVars {
    pub proj1: SepConvVars,
    pub proj2: SepConvVars,
    pub gru: GruVars,
    pub head1: SepConvVars,
    pub head2: SepConvVars,
    pub init: Option<(Var, Var)>,
}

impl RefinementVars {
    /// Inverse of [`vars`](Self::vars): 21 handles, plus 2 for the init
    /// projection when `with_init`.
    pub fn from_vars(v: &[Var], with_init: bool) -> Result<Self> {
        let expected = 21 + if with_init { 2 } else { 0 };
        if v.len() != expected {
            return Err(Error::shape(
                "RefinementVars::from_vars",
                format!("{} handles, expected {expected}", v.len()),
            ));
        }
        let sep = |i: usize| SepConvVars { depthwise: v[3 * i], pointwise: v[3 * i + 1], bias: v[3 * i + 2] };
        Ok(RefinementVars {
            proj1: sep(0),
            proj2: sep(1),
            gru: GruVars { z: sep(2), r: sep(3), h: sep(4) },
            head1: sep(5),
            head2: sep(6),
            init: with_init.then(|| (v[21], v[22])),
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for s in [self.proj1, self.proj2, self.gru.z, self.gru.r, self.gru.h, self.head1, self.head2] {
            out.extend(s.vars());
        }
        if let Some((w, b)) = self.init {
            out.extend([w, b]);
        }
        out
    }
}

const SEP_PARTS: [&str; 3] = ["depthwise", "pointwise", "bias"];
const SEP_BLOCKS: [&str; 7] = ["proj1", "proj2", "gru.z", "gru.r", "gru.h", "head1", "head2"];

impl RefinementWeights {
    /// Seeded random weights. Update heads start at zero so an untrained
    /// engine leaves depths untouched. `pen_channels` is the channel count of
    /// the concatenated penultimate features.
    pub fn random(config: &RefinementConfig, pen_channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, ch) = (config.proj_channels, config.hidden_channels);
        Ok(RefinementWeights {
            proj1: SepConvWeights::random(STACKED_MAPS, p, 1.0, &mut rng),
            proj2: SepConvWeights::random(p, p, 1.0, &mut rng),
            gru: GruWeights::random(ch, config.input_channels(), 1.0, &mut rng),
            head1: SepConvWeights::zeros(ch, 1),
            head2: SepConvWeights::zeros(ch, 1),
            init: (pen_channels != ch).then(|| PointwiseWeights::random(pen_channels, ch, 1.0, &mut rng)),
        })
    }

    fn sep_blocks(&self) -> [&SepConvWeights; 7] {
        [&self.proj1, &self.proj2, &self.gru.z, &self.gru.r, &self.gru.h, &self.head1, &self.head2]
    }

    pub fn hidden_channels(&self) -> usize {
        self.gru.hidden_channels()
    }

    pub fn bind(&self, tape: &mut Tape) -> RefinementVars {
        RefinementVars {
            proj1: self.proj1.bind(tape),
            proj2: self.proj2.bind(tape),
            gru: self.gru.bind(tape),
            head1: self.head1.bind(tape),
            head2: self.head2.bind(tape),
            init: self.init.as_ref().map(|p| p.bind(tape)),
        }
    }

    /// Tensors with stable dotted names, e.g. `gru.z.pointwise`.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (block, w) in SEP_BLOCKS.iter().zip(self.sep_blocks()) {
            for (part, t) in SEP_PARTS.iter().zip(w.tensors()) {
                out.push((format!("{block}.{part}"), t));
            }
        }
        if let Some(p) = &self.init {
            out.push(("init.weight".into(), &p.weight));
            out.push(("init.bias".into(), &p.bias));
        }
        out
    }

    /// Mutable tensors in [`named`](Self::named) order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let RefinementWeights { proj1, proj2, gru, head1, head2, init } = self;
        let mut out: Vec<&mut Tensor> = Vec::new();
        for w in [proj1, proj2, &mut gru.z, &mut gru.r, &mut gru.h, head1, head2] {
            out.extend(w.tensors_mut());
        }
        if let Some(p) = init {
            out.extend([&mut p.weight, &mut p.bias]);
        }
        out
    }

    /// Rebuilds weights from named tensors (any order), validating every shape.
    pub fn from_named(mut tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut take = |name: &str| -> Result<Tensor> {
            let i = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Config(format!("weights lack tensor `{name}`")))?;
            Ok(tensors.swap_remove(i).1)
        };
        let mut seps = Vec::with_capacity(SEP_BLOCKS.len());
        for block in SEP_BLOCKS {
            let [d, p, b] = SEP_PARTS.map(|part| take(&format!("{block}.{part}")));
            seps.push(SepConvWeights::new(d?, p?, b?)?);
        }
        let init = match (take("init.weight"), take("init.bias")) {
            (Ok(weight), Ok(bias)) => Some(PointwiseWeights { weight, bias }),
            (Err(_), Err(_)) => None,
            _ => return Err(Error::Config("init projection needs both weight and bias".into())),
        };
        if let Some((name, _)) = tensors.first() {
            return Err(Error::Config(format!("unexpected weight tensor `{name}`")));
        }
        let mut seps = seps.into_iter();
        let mut next = || seps.next().expect("seven blocks");
        let w = RefinementWeights {
            proj1: next(),
            proj2: next(),
            gru: GruWeights { z: next(), r: next(), h: next() },
            head1: next(),
            head2: next(),
            init,
        };
        w.check()?;
        Ok(w)
    }

    /// Cross-block channel consistency.
    pub fn check(&self) -> Result<()> {
        let ch = self.hidden_channels();
        let p = self.proj1.out_channels();
        let bad = |what: &str| Err(Error::shape("RefinementWeights", what.to_string()));
        if self.proj1.in_channels() != STACKED_MAPS {
            return bad("proj1 must take the five stacked maps");
        }
        if self.proj2.in_channels() != p {
            return bad("proj2 input differs from proj1 output");
        }
        for g in [&self.gru.z, &self.gru.r, &self.gru.h] {
            if g.out_channels() != ch || g.in_channels() != self.gru.z.in_channels() || g.in_channels() <= ch {
                return bad("gate convolutions disagree on channel counts");
            }
        }
        for head in [&self.head1, &self.head2] {
            if head.in_channels() != ch || head.out_channels() != 1 {
                return bad("update heads must map the hidden state to one channel");
            }
        }
        if let Some(init) = &self.init {
            let s = init.weight.shape();
            if s.channels != ch || s.width != 1 || init.bias.shape() != Shape::new(ch, 1, 1) {
                return bad("init projection must output the hidden channels");
            }
        }
        Ok(())
    }

    /// Context channels implied by the gate inputs.
    pub fn context_channels(&self) -> usize {
        self.gru.z.in_channels() - self.hidden_channels() - self.proj2.out_channels()
    }
}

/// `h^0 = tanh(concat(pen1, pen2))`, through the optional 1x1 projection.
pub fn init_hidden(tape: &mut Tape, pen1: Var, pen2: Var, proj: Option<(Var, Var)>) -> Result<Var> {
    let (a, b) = (tape.shape(pen1), tape.shape(pen2));
    if !a.same_spatial(&b) {
        return Err(Error::shape("init_hidden", format!("{a} vs {b}")));
    }
    let cat = tape.concat(&[pen1, pen2])?;
    let pre = match proj {
        Some((w, bias)) => tape.pointwise_conv(cat, w, bias)?,
        None => cat,
    };
    tape.tanh(pre)
}

/// Per-iteration maps fed to the GRU, all at 1/4 resolution.
#[derive(Debug, Clone, Copy)]
pub struct RefinementInputs {
    pub d1: Var,
    pub d2: Var,
    pub u1: Var,
    pub u2: Var,
    pub dif: Var,
    pub context: Var,
}

/// `I^t = concat(conv2(tanh(conv1(stack(d1, d2, u1, u2, dif)))), context)`.
pub fn build_input(
    tape: &mut Tape,
    r: &RefinementInputs,
    proj1: &SepConvVars,
    proj2: &SepConvVars,
) -> Result<Var> {
    let maps = [r.d1, r.d2, r.u1, r.u2, r.dif];
    let base = tape.shape(r.d1);
    for m in maps {
        if tape.shape(m) != base.with_channels(1) {
            return Err(Error::shape(
                "build_input",
                format!("map {} is not single-channel {}", tape.shape(m), base.with_channels(1)),
            ));
        }
    }
    if !tape.shape(r.context).same_spatial(&base) {
        return Err(Error::shape(
            "build_input",
            format!("context {} vs maps {base}", tape.shape(r.context)),
        ));
    }
    let stack = tape.concat(&maps)?;
    let f = tape.conv2d_separable(stack, proj1)?;
    let f = tape.tanh(f)?;
    let f = tape.conv2d_separable(f, proj2)?;
    tape.concat(&[f, r.context])
}

/// Intermediate values of one recurrence step.
#[derive(Debug, Clone, Copy)]
pub struct GruStep {
    pub z: Var,
    pub r: Var,
    pub candidate: Var,
    pub h: Var,
}

/// One ConvGRU update:
///
/// ```text
/// z  = sigmoid(conv([h, I], W_z))
/// r  = sigmoid(conv([h, I], W_r))
/// h~ = tanh(conv([r * h, I], W_h))
/// h' = (1 - z) * h + z * h~
/// ```
pub fn conv_gru_step_detailed(tape: &mut Tape, h: Var, input: Var, w: &GruVars) -> Result<GruStep> {
    let hs = tape.shape(h);
    if !tape.shape(input).same_spatial(&hs) {
        return Err(Error::shape(
            "conv_gru_step",
            format!("hidden {hs} vs input {}", tape.shape(input)),
        ));
    }
    let hx = tape.concat(&[h, input])?;
    let z = tape.conv2d_separable(hx, &w.z)?;
    let z = tape.sigmoid(z)?;
    let r = tape.conv2d_separable(hx, &w.r)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let rhx = tape.concat(&[rh, input])?;
    let candidate = tape.conv2d_separable(rhx, &w.h)?;
    let candidate = tape.tanh(candidate)?;
    let keep = tape.one_minus(z)?;
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(z, candidate)?;
    let h = tape.add(kept, fresh)?;
    Ok(GruStep { z, r, candidate, h })
}

pub fn conv_gru_step(tape: &mut Tape, h: Var, input: Var, w: &GruVars) -> Result<Var> {
    Ok(conv_gru_step_detailed(tape, h, input, w)?.h)
}

/// `(dD1, dD2)`: one separable convolution per head from the hidden state.
pub fn depth_update_head(
    tape: &mut Tape,
    h: Var,
    head1: &SepConvVars,
    head2: &SepConvVars,
) -> Result<(Var, Var)> {
    Ok((tape.conv2d_separable(h, head1)?, tape.conv2d_separable(h, head2)?))
}

/// Iterates of a refinement run.
#[derive(Debug, Clone)]
pub struct RefinementTrace {
    /// `D1^1 .. D1^t_max`.
    pub d1: Vec<Var>,
    pub d2: Vec<Var>,
    pub hidden: Vec<Var>,
}

impl RefinementTrace {
    pub fn final_depths(&self) -> (Var, Var) {
        (*self.d1.last().expect("t_max >= 1"), *self.d2.last().expect("t_max >= 1"))
    }
}

/// Runs `t_max` iterations of input projection, GRU step, additive update and
/// disagreement recomputation. Uncertainties and context stay fixed; updated
/// depths are floored at `min_depth`.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    tape: &mut Tape,
    d1: Var,
    d2: Var,
    u1: Var,
    u2: Var,
    context: Var,
    h0: Var,
    w: &RefinementVars,
    t_max: usize,
    min_depth: f64,
) -> Result<RefinementTrace> {
    if t_max == 0 {
        return Err(Error::Domain("refine needs t_max >= 1".into()));
    }
    let mut trace = RefinementTrace { d1: Vec::new(), d2: Vec::new(), hidden: Vec::new() };
    let (mut a, mut b, mut h) = (d1, d2, h0);
    for _ in 0..t_max {
        let diff = tape.sub(a, b)?;
        let dif = tape.abs(diff)?;
        let inputs = RefinementInputs { d1: a, d2: b, u1, u2, dif, context };
        let i = build_input(tape, &inputs, &w.proj1, &w.proj2)?;
        h = conv_gru_step(tape, h, i, &w.gru)?;
        let (da, db) = depth_update_head(tape, h, &w.head1, &w.head2)?;
        let na = tape.add(a, da)?;
        let nb = tape.add(b, db)?;
        a = tape.clamp_min(na, min_depth)?;
        b = tape.clamp_min(nb, min_depth)?;
        trace.d1.push(a);
        trace.d2.push(b);
        trace.hidden.push(h);
    }
    Ok(trace)
}

/// Differentiable `0.5 * (up(d1) + up(d2))`.
pub fn fuse_var(tape: &mut Tape, d1: Var, d2: Var, full_h: usize, full_w: usize) -> Result<Var> {
    let a = tape.bilinear_resize(d1, full_h, full_w)?;
    let b = tape.bilinear_resize(d2, full_h, full_w)?;
    let s = tape.add(a, b)?;
    tape.scale(s, 0.5)
}

/// Upsamples both final depths to full resolution and averages them.
pub fn fuse(d1: &Tensor, d2: &Tensor, full_h: usize, full_w: usize) -> Result<DepthMap> {
    if d1.shape() != d2.shape() || d1.shape().channels != 1 {
        return Err(Error::shape("fuse", format!("{} vs {}", d1.shape(), d2.shape())));
    }
    if full_h == 0 || full_w == 0 {
        return Err(Error::shape("fuse", "output size must be at least 1x1"));
    }
    let a = bilinear_resize_tensor(d1, full_h, full_w);
    let b = bilinear_resize_tensor(d2, full_h, full_w);
    let values = Grid::from_vec(
        full_w,
        full_h,
        a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect(),
    )?;
    Ok(DepthMap::from_positive(values))
}

#[cfg(test)]
mod tests;
