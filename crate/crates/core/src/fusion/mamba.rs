//! Dual-branch selective-scan blocks over Hilbert-serialised grids, arranged as a U.

use rand::Rng;
use semocc_tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use super::hilbert::HilbertOrder;
use crate::error::{dims_err, Error, Result};
use crate::nn::{Init, Linear};

/// Gate projections and output map of one scan branch.
#[derive(Clone, Debug)]
pub struct ScanBranch {
    pub decay: Linear,
    pub input: Linear,
    pub readout: Linear,
    /// No bias: a zero weight silences the branch exactly.
    pub output: Linear,
}

impl ScanBranch {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let decay = Linear::new(store, &format!("{name}.decay"), channels, channels, Init::Small, rng);
        // Start with a long memory: sigmoid(2) ~ 0.88.
        store.get_mut(decay.bias.expect("decay bias")).data_mut().fill(2.0);
        Self {
            decay,
            input: Linear::new(store, &format!("{name}.input"), channels, channels, Init::Small, rng),
            readout: Linear::new(store, &format!("{name}.readout"), channels, channels, Init::Small, rng),
            output: Linear::without_bias(store, &format!("{name}.output"), channels, channels, Init::Small, rng),
        }
    }

    /// `[C, L]` sequence through the gated recurrence, back to `[C, L]`.
    /// Positions are RMS-normalised over channels first.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, seq: Var) -> Result<Var> {
        let seq = rms_normalize(g, seq)?;
        let a = self.decay.forward(g, store, seq)?;
        let a = g.sigmoid(a);
        let b = self.input.forward(g, store, seq)?;
        let c = self.readout.forward(g, store, seq)?;
        let [xt, at, bt, ct] = [seq, a, b, c].map(|v| g.transpose(v));
        let y = g.selective_scan(xt?, at?, bt?, ct?)?;
        let y = g.transpose(y)?;
        self.output.forward(g, store, y)
    }
}

/// `x / sqrt(mean_c x^2 + 1e-6)` per column of `[C, L]`.
pub fn rms_normalize(g: &mut Graph, x: Var) -> Result<Var> {
    let c = g.shape(x)[0];
    let sq = g.mul(x, x)?;
    let ms = g.mean_axis(sq, 0)?;
    let ms = g.add_scalar(ms, 1e-6);
    let ln = g.ln(ms);
    let ln = g.scale(ln, -0.5);
    let inv = g.exp(ln);
    let inv = g.expand(inv, 0, c)?;
    Ok(g.mul(x, inv)?)
}

/// Two scan branches that trade their leading channels before scanning.
#[derive(Clone, Debug)]
pub struct DualBlock {
    pub semantic: ScanBranch,
    pub geometric: ScanBranch,
    pub pos_semantic: ParamId,
    pub pos_geometric: ParamId,
    pub exchanged: usize,
    /// Sequence order as flat indices into the block's (padded) grid.
    pub order: Vec<usize>,
    pub dims: [usize; 3],
    pub channels: usize,
}

impl DualBlock {
    /// `dims` is the block's grid, `real` the leading sub-box that is scanned.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        rho: f64,
        dims: [usize; 3],
        real: [usize; 3],
        rng: &mut impl Rng,
    ) -> Self {
        let order = HilbertOrder::new(real).embedded_in(dims);
        let len = order.len();
        let pos_semantic = store.add(&format!("{name}.pos_sem"), Tensor::uniform(&[channels, len], 0.02, rng));
        let pos_geometric = store.add(&format!("{name}.pos_geo"), Tensor::uniform(&[channels, len], 0.02, rng));
        Self {
            semantic: ScanBranch::new(store, &format!("{name}.sem"), channels, rng),
            geometric: ScanBranch::new(store, &format!("{name}.geo"), channels, rng),
            pos_semantic,
            pos_geometric,
            exchanged: exchanged_channels(rho, channels),
            order,
            dims,
            channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fs: Var, fg: Var) -> Result<(Var, Var)> {
        let shape = g.shape(fs).to_vec();
        let want = [self.channels, self.dims[0], self.dims[1], self.dims[2]];
        if shape != want || g.shape(fg) != want {
            return Err(dims_err("dual block inputs", want, (shape, g.shape(fg).to_vec())));
        }
        let n: usize = self.dims.iter().product();
        let c = self.channels;
        let linearize = |g: &mut Graph, x: Var, pos: ParamId| -> Result<Var> {
            let flat = g.reshape(x, &[c, n])?;
            let seq = g.gather(flat, 1, &self.order)?;
            let p = g.param(store, pos);
            Ok(g.add(seq, p)?)
        };
        let mut ss = linearize(g, fs, self.pos_semantic)?;
        let mut sg = linearize(g, fg, self.pos_geometric)?;
        let k = self.exchanged;
        if k > 0 {
            let swap = |g: &mut Graph, own: Var, other: Var| -> Result<Var> {
                let lead = g.slice(other, 0, 0, k)?;
                if k == c {
                    return Ok(lead);
                }
                let rest = g.slice(own, 0, k, c - k)?;
                Ok(g.concat(&[lead, rest], 0)?)
            };
            let (ns, ng) = (swap(g, ss, sg)?, swap(g, sg, ss)?);
            ss = ns;
            sg = ng;
        }
        let ys = self.semantic.forward(g, store, ss)?;
        let yg = self.geometric.forward(g, store, sg)?;
        let restore = |g: &mut Graph, x: Var, y: Var| -> Result<Var> {
            let back = g.scatter_add(y, 1, &self.order, n)?;
            let back = g.reshape(back, &want)?;
            Ok(g.add(x, back)?)
        };
        Ok((restore(g, fs, ys)?, restore(g, fg, yg)?))
    }
}

pub fn exchanged_channels(rho: f64, channels: usize) -> usize {
    ((rho * channels as f64).floor() as usize).min(channels)
}

/// Stride-2 stages of the U.
pub const STAGES: usize = 4;
/// Padded grid dims must be multiples of this.
pub const PAD_MULTIPLE: usize = 1 << STAGES;

pub fn padded_dims(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|d| d.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE)
}

#[derive(Clone, Debug)]
struct Stage {
    dims: [usize; 3],
    /// 1 on real cells, 0 on padding, shaped `[C, dims]`.
    mask: Tensor,
}

/// Four down stages and four up stages, one dual block each.
#[derive(Clone, Debug)]
pub struct DualMambaStack {
    pub channels: usize,
    pub real: [usize; 3],
    pub padded: [usize; 3],
    stages: Vec<Stage>,
    down_blocks: Vec<DualBlock>,
    up_blocks: Vec<DualBlock>,
    /// Per stage transition, semantic then geometric.
    down_maps: Vec<[Linear; 2]>,
    up_maps: Vec<[Linear; 2]>,
    pub merge: Linear,
}

impl DualMambaStack {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        rho: f64,
        real: [usize; 3],
        padded: [usize; 3],
        rng: &mut R,
    ) -> Result<Self> {
        if padded.iter().any(|d| d % PAD_MULTIPLE != 0) || padded.iter().zip(&real).any(|(p, r)| p < r) {
            return Err(Error::FusionPadding {
                dims: padded,
                multiple: PAD_MULTIPLE,
                required: padded_dims(real),
            });
        }
        let mut stages = Vec::new();
        for s in 0..=STAGES {
            let dims = padded.map(|d| d >> s);
            let real_s = real_at(real, s);
            let mut mask = Tensor::zeros(&[channels, dims[0], dims[1], dims[2]]);
            let n: usize = dims.iter().product();
            for c in 0..channels {
                for i in 0..real_s[0] {
                    for j in 0..real_s[1] {
                        for k in 0..real_s[2] {
                            mask.data_mut()[c * n + (i * dims[1] + j) * dims[2] + k] = 1.0;
                        }
                    }
                }
            }
            stages.push(Stage { dims, mask });
        }
        let mut down_blocks = Vec::new();
        let mut up_blocks = Vec::new();
        let mut down_maps = Vec::new();
        let mut up_maps = Vec::new();
        for s in 0..STAGES {
            let real_s = real_at(real, s);
            let dims = stages[s].dims;
            down_blocks.push(DualBlock::new(store, &format!("{prefix}.down{s}"), channels, rho, dims, real_s, rng));
            up_blocks.push(DualBlock::new(store, &format!("{prefix}.up{s}"), channels, rho, dims, real_s, rng));
            let mut maps = |kind: &str, rng: &mut R| {
                [
                    Linear::new(store, &format!("{prefix}.{kind}{s}.sem"), channels, channels, Init::He, rng),
                    Linear::new(store, &format!("{prefix}.{kind}{s}.geo"), channels, channels, Init::He, rng),
                ]
            };
            down_maps.push(maps("pool", rng));
            up_maps.push(maps("unpool", rng));
        }
        let merge = Linear::new(store, &format!("{prefix}.merge"), 2 * channels, channels, Init::Small, rng);
        Ok(Self {
            channels,
            real,
            padded,
            stages,
            down_blocks,
            up_blocks,
            down_maps,
            up_maps,
            merge,
        })
    }

    pub fn down_block(&self, s: usize) -> &DualBlock {
        &self.down_blocks[s]
    }

    pub fn up_block(&self, s: usize) -> &DualBlock {
        &self.up_blocks[s]
    }

    fn masked(&self, g: &mut Graph, x: Var, s: usize) -> Result<Var> {
        let m = g.constant(&self.stages[s].mask);
        Ok(g.mul(x, m)?)
    }

    /// Real-sized `[C, H, W, Z]` grids in, fused real-sized grid out.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fs: Var, fg: Var) -> Result<Var> {
        let want = [self.channels, self.real[0], self.real[1], self.real[2]];
        for v in [fs, fg] {
            if g.shape(v) != want {
                return Err(dims_err("fusion input", want, g.shape(v)));
            }
        }
        let ps = pad(g, fs, self.padded)?;
        let pg = pad(g, fg, self.padded)?;
        let out = self.forward_padded(g, store, ps, pg)?;
        crop(g, out, self.real)
    }

    /// Padded grids in and out; padding content is masked away first.
    pub fn forward_padded(&self, g: &mut Graph, store: &ParamStore, fs: Var, fg: Var) -> Result<Var> {
        let mut xs = self.masked(g, fs, 0)?;
        let mut xg = self.masked(g, fg, 0)?;
        let mut skips = Vec::new();
        for s in 0..STAGES {
            let (a, b) = self.down_blocks[s].forward(g, store, xs, xg)?;
            let a = self.masked(g, a, s)?;
            let b = self.masked(g, b, s)?;
            skips.push((a, b));
            let mut next = [a, b];
            for (x, map) in next.iter_mut().zip(&self.down_maps[s]) {
                let p = g.avg_pool3d(*x)?;
                let p = map.forward(g, store, p)?;
                let p = g.relu(p);
                *x = self.masked(g, p, s + 1)?;
            }
            [xs, xg] = next;
        }
        for s in (0..STAGES).rev() {
            let mut next = [xs, xg];
            for ((x, map), skip) in next.iter_mut().zip(&self.up_maps[s]).zip([skips[s].0, skips[s].1]) {
                let u = g.upsample3d(*x)?;
                let u = map.forward(g, store, u)?;
                let u = g.add(u, skip)?;
                *x = self.masked(g, u, s)?;
            }
            let (a, b) = self.up_blocks[s].forward(g, store, next[0], next[1])?;
            xs = self.masked(g, a, s)?;
            xg = self.masked(g, b, s)?;
        }
        let cat = g.concat(&[xs, xg], 0)?;
        let out = self.merge.forward(g, store, cat)?;
        self.masked(g, out, 0)
    }
}

fn real_at(real: [usize; 3], stage: usize) -> [usize; 3] {
    real.map(|d| d.div_ceil(1 << stage))
}

/// Zero-pads the spatial axes of `[C, h, w, z]` up to `dims`.
pub fn pad(g: &mut Graph, x: Var, dims: [usize; 3]) -> Result<Var> {
    let mut out = x;
    for a in 0..3 {
        let mut shape = g.shape(out).to_vec();
        let have = shape[a + 1];
        if have < dims[a] {
            shape[a + 1] = dims[a] - have;
            let z = g.constant(&Tensor::zeros(&shape));
            out = g.concat(&[out, z], a + 1)?;
        }
    }
    Ok(out)
}

/// Keeps the leading `dims` cells of each spatial axis.
pub fn crop(g: &mut Graph, x: Var, dims: [usize; 3]) -> Result<Var> {
    let mut out = x;
    for (a, &d) in dims.iter().enumerate() {
        if g.shape(out)[a + 1] != d {
            out = g.slice(out, a + 1, 0, d)?;
        }
    }
    Ok(out)
}
