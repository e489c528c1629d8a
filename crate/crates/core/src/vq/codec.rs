use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CodeGrid, Codebook, Grid, BOTTOM, TOP};
use crate::error::{invalid, DrrError, Result};
use crate::image::ImageTensor;
use crate::nn::{squared_distance, Linear};

pub const DEFAULT_CODEBOOK_SIZE: usize = 512;
pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_BETA: f64 = 0.25;
pub const DEFAULT_LR: f64 = 3e-4;

/// Patch layout and codebook shape shared by both levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecGeometry {
    pub channels: usize,
    /// Side length of a bottom-level patch, in pixels.
    pub patch: usize,
    /// Side length, in bottom patches, of the block pooled into one top-level code.
    pub pool: usize,
    pub codebook_size: usize,
    pub dim: usize,
}

impl Default for CodecGeometry {
    fn default() -> Self {
        Self { channels: 3, patch: 4, pool: 2, codebook_size: DEFAULT_CODEBOOK_SIZE, dim: DEFAULT_DIM }
    }
}

impl CodecGeometry {
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.patch == 0 || self.pool == 0 || self.dim == 0 {
            return invalid(format!("degenerate codec geometry {self:?}"));
        }
        if !(2..=usize::from(u16::MAX) + 1).contains(&self.codebook_size) {
            return invalid(format!("codebook size {} outside [2, 65536]", self.codebook_size));
        }
        Ok(())
    }

    /// `((top_rows, top_cols), (bottom_rows, bottom_cols))` for an image of the given size.
    pub fn grid_shapes(&self, height: usize, width: usize) -> Result<((usize, usize), (usize, usize))> {
        let block = self.patch * self.pool;
        if !height.is_multiple_of(block) || !width.is_multiple_of(block) {
            return invalid(format!(
                "{height}x{width} image not divisible into {block}x{block} blocks (patch {} x pool {})",
                self.patch, self.pool
            ));
        }
        let bottom = (height / self.patch, width / self.patch);
        Ok(((bottom.0 / self.pool, bottom.1 / self.pool), bottom))
    }

    fn check_image(&self, img: &ImageTensor) -> Result<((usize, usize), (usize, usize))> {
        if img.channels() != self.channels {
            return invalid(format!("image has {} channels, codec expects {}", img.channels(), self.channels));
        }
        self.grid_shapes(img.height(), img.width())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub geometry: CodecGeometry,
    pub lr: f64,
    pub epochs: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { geometry: CodecGeometry::default(), lr: DEFAULT_LR, epochs: 100, beta: DEFAULT_BETA, seed: 0 }
    }
}

/// Every trainable tensor of the codec. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecWeights {
    /// patch -> d
    pub enc_bottom: Linear,
    /// pooled bottom feature -> d
    pub enc_top: Linear,
    /// bottom embedding -> patch
    pub dec_bottom: Linear,
    /// top embedding -> patch, replicated over the pooled block
    pub dec_top: Linear,
    /// Indexed by [`TOP`] and [`BOTTOM`].
    pub codebooks: [Codebook; 2],
}

impl CodecWeights {
    pub fn zeros(g: &CodecGeometry) -> Self {
        let p = g.patch_dim();
        Self {
            enc_bottom: Linear::zeros(p, g.dim),
            enc_top: Linear::zeros(g.dim, g.dim),
            dec_bottom: Linear::zeros(g.dim, p),
            dec_top: Linear::zeros(g.dim, p),
            codebooks: [Codebook::zeros(g.codebook_size, g.dim), Codebook::zeros(g.codebook_size, g.dim)],
        }
    }

    pub fn axpy(&mut self, scale: f64, other: &CodecWeights) {
        self.enc_bottom.axpy(scale, &other.enc_bottom);
        self.enc_top.axpy(scale, &other.enc_top);
        self.dec_bottom.axpy(scale, &other.dec_bottom);
        self.dec_top.axpy(scale, &other.dec_top);
        for (a, b) in self.codebooks.iter_mut().zip(&other.codebooks) {
            for (x, y) in a.vectors_mut().iter_mut().zip(b.vectors()) {
                *x += scale * y;
            }
        }
    }

    /// All values in a fixed order: encoders, decoders, then top and bottom codebooks.
    pub fn to_vec(&self) -> Vec<f64> {
        self.layers()
            .into_iter()
            .flat_map(|l| l.parameters().copied().collect::<Vec<_>>())
            .chain(self.codebooks.iter().flat_map(|c| c.vectors().to_vec()))
            .collect()
    }

    /// Inverse of [`CodecWeights::to_vec`].
    pub fn set_from_slice(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for layer in [&mut self.enc_bottom, &mut self.enc_top, &mut self.dec_bottom, &mut self.dec_top] {
            for p in layer.parameters_mut() {
                *p = *it.next().expect("parameter vector too short");
            }
        }
        for cb in &mut self.codebooks {
            for p in cb.vectors_mut() {
                *p = *it.next().expect("parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    pub fn layers(&self) -> [&Linear; 4] {
        [&self.enc_bottom, &self.enc_top, &self.dec_bottom, &self.dec_top]
    }

    pub fn is_zero(&self) -> bool {
        self.to_vec().iter().all(|v| *v == 0.0)
    }
}

/// Trained (or freshly initialized) codec.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    geometry: CodecGeometry,
    weights: CodecWeights,
    beta: f64,
    frozen: bool,
}

/// Per-term loss values and gradients for one image.
#[derive(Debug, Clone)]
pub struct VqLoss {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub reconstruction_grads: CodecWeights,
    pub codebook_grads: CodecWeights,
    pub commitment_grads: CodecWeights,
}

impl VqLoss {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.codebook + self.commitment
    }

    pub fn total_grads(&self) -> CodecWeights {
        let mut g = self.reconstruction_grads.clone();
        g.axpy(1.0, &self.codebook_grads);
        g.axpy(1.0, &self.commitment_grads);
        g
    }
}

/// Intermediate values of the encoder for one image.
struct Encoded {
    top_shape: (usize, usize),
    bottom_shape: (usize, usize),
    patches: Vec<f64>,
    z_bottom: Vec<f64>,
    k_bottom: Vec<usize>,
    pooled: Vec<f64>,
    z_top: Vec<f64>,
    k_top: Vec<usize>,
}

impl CodecParams {
    /// Seeded initialization: uniform fan-in scaled layers, codebooks uniform in `[-1/K, 1/K]`.
    pub fn init(geometry: CodecGeometry, beta: f64, seed: u64) -> Result<Self> {
        geometry.validate()?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return invalid(format!("beta must be finite and nonnegative, got {beta}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = geometry.patch_dim();
        let d = geometry.dim;
        let weights = CodecWeights {
            enc_bottom: Linear::uniform(p, d, &mut rng),
            enc_top: Linear::uniform(d, d, &mut rng),
            dec_bottom: Linear::uniform(d, p, &mut rng),
            dec_top: Linear::uniform(d, p, &mut rng),
            codebooks: [
                Codebook::random(geometry.codebook_size, d, &mut rng)?,
                Codebook::random(geometry.codebook_size, d, &mut rng)?,
            ],
        };
        Ok(Self { geometry, weights, beta, frozen: false })
    }

    pub fn from_weights(geometry: CodecGeometry, weights: CodecWeights, beta: f64) -> Result<Self> {
        geometry.validate()?;
        let expected = CodecWeights::zeros(&geometry);
        let shapes_match = weights
            .layers()
            .iter()
            .zip(expected.layers())
            .all(|(a, b)| (a.inputs(), a.outputs()) == (b.inputs(), b.outputs()))
            && weights.codebooks.iter().all(|c| (c.size(), c.dim()) == (geometry.codebook_size, geometry.dim));
        if !shapes_match {
            return invalid("weight shapes inconsistent with codec geometry");
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return invalid(format!("beta must be finite and nonnegative, got {beta}"));
        }
        Ok(Self { geometry, weights, beta, frozen: false })
    }

    pub fn geometry(&self) -> &CodecGeometry {
        &self.geometry
    }

    pub fn weights(&self) -> &CodecWeights {
        &self.weights
    }

    /// Mutable access for callers that adjust weights directly; rejected once frozen.
    pub fn weights_mut(&mut self) -> Result<&mut CodecWeights> {
        if self.frozen {
            return Err(DrrError::State("codec is frozen".into()));
        }
        Ok(&mut self.weights)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub(crate) fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Marks the codec as a fixed feature extractor. Idempotent.
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    fn encode_forward(&self, img: &ImageTensor) -> Result<Encoded> {
        let (top_shape, bottom_shape) = self.geometry.check_image(img)?;
        let g = &self.geometry;
        let (p, s, d) = (g.patch, g.pool, g.dim);
        let pd = g.patch_dim();
        let nb = bottom_shape.0 * bottom_shape.1;
        let nt = top_shape.0 * top_shape.1;

        let mut patches = Vec::with_capacity(nb * pd);
        for by in 0..bottom_shape.0 {
            for bx in 0..bottom_shape.1 {
                for dy in 0..p {
                    for dx in 0..p {
                        for c in 0..g.channels {
                            patches.push(img.get(by * p + dy, bx * p + dx, c));
                        }
                    }
                }
            }
        }

        let mut z_bottom = vec![0.0; nb * d];
        for (patch, z) in patches.chunks_exact(pd).zip(z_bottom.chunks_exact_mut(d)) {
            self.weights.enc_bottom.forward(patch, z);
        }
        let cb_bottom = &self.weights.codebooks[BOTTOM];
        let k_bottom = z_bottom.chunks_exact(d).map(|z| cb_bottom.nearest(z)).collect();

        let mut pooled = vec![0.0; nt * d];
        let scale = 1.0 / (s * s) as f64;
        for by in 0..bottom_shape.0 {
            for bx in 0..bottom_shape.1 {
                let t = (by / s) * top_shape.1 + bx / s;
                let z = &z_bottom[(by * bottom_shape.1 + bx) * d..][..d];
                for (acc, v) in pooled[t * d..(t + 1) * d].iter_mut().zip(z) {
                    *acc += scale * v;
                }
            }
        }
        let mut z_top = vec![0.0; nt * d];
        for (u, z) in pooled.chunks_exact(d).zip(z_top.chunks_exact_mut(d)) {
            self.weights.enc_top.forward(u, z);
        }
        let cb_top = &self.weights.codebooks[TOP];
        let k_top = z_top.chunks_exact(d).map(|z| cb_top.nearest(z)).collect();

        Ok(Encoded { top_shape, bottom_shape, patches, z_bottom, k_bottom, pooled, z_top, k_top })
    }

    pub fn encode_image(&self, img: &ImageTensor) -> Result<CodeGrid> {
        let e = self.encode_forward(img)?;
        let to_u16 = |ks: &[usize]| ks.iter().map(|&k| k as u16).collect::<Vec<_>>();
        Ok(CodeGrid {
            top: Grid::new(e.top_shape.0, e.top_shape.1, to_u16(&e.k_top))?,
            bottom: Grid::new(e.bottom_shape.0, e.bottom_shape.1, to_u16(&e.k_bottom))?,
        })
    }

    /// Unclamped per-patch decoder output (`n_bottom x patch_dim`) for the given indices.
    fn decode_patches(
        &self,
        top_shape: (usize, usize),
        bottom_shape: (usize, usize),
        k_top: &[usize],
        k_bottom: &[usize],
    ) -> Vec<f64> {
        let rows = |level: usize, ks: &[usize]| -> Vec<f64> {
            ks.iter().flat_map(|&k| self.weights.codebooks[level].row(k).to_vec()).collect()
        };
        self.decode_inputs(top_shape, bottom_shape, &rows(TOP, k_top), &rows(BOTTOM, k_bottom))
    }

    /// Decoder output patches for arbitrary top and bottom decoder inputs.
    fn decode_inputs(
        &self,
        top_shape: (usize, usize),
        bottom_shape: (usize, usize),
        top_in: &[f64],
        bottom_in: &[f64],
    ) -> Vec<f64> {
        let pd = self.geometry.patch_dim();
        let (s, d) = (self.geometry.pool, self.geometry.dim);
        let mut top_out = vec![0.0; top_in.len() / d * pd];
        for (z, out) in top_in.chunks_exact(d).zip(top_out.chunks_exact_mut(pd)) {
            self.weights.dec_top.forward(z, out);
        }
        let mut out = vec![0.0; bottom_in.len() / d * pd];
        for by in 0..bottom_shape.0 {
            for bx in 0..bottom_shape.1 {
                let j = by * bottom_shape.1 + bx;
                let t = (by / s) * top_shape.1 + bx / s;
                let patch = &mut out[j * pd..(j + 1) * pd];
                self.weights.dec_bottom.forward(&bottom_in[j * d..(j + 1) * d], patch);
                for (o, v) in patch.iter_mut().zip(&top_out[t * pd..(t + 1) * pd]) {
                    *o += v;
                }
            }
        }
        out
    }

    fn assemble(&self, bottom_shape: (usize, usize), patches: &[f64]) -> Result<ImageTensor> {
        let g = &self.geometry;
        let (p, ch) = (g.patch, g.channels);
        let (h, w) = (bottom_shape.0 * p, bottom_shape.1 * p);
        let mut values = vec![0.0; h * w * ch];
        let pd = g.patch_dim();
        for (j, patch) in patches.chunks_exact(pd).enumerate() {
            let (by, bx) = (j / bottom_shape.1, j % bottom_shape.1);
            let mut i = 0;
            for dy in 0..p {
                for dx in 0..p {
                    for c in 0..ch {
                        values[((by * p + dy) * w + bx * p + dx) * ch + c] = patch[i];
                        i += 1;
                    }
                }
            }
        }
        ImageTensor::from_clamped(h, w, ch, values)
    }

    pub fn decode_codes(&self, codes: &CodeGrid) -> Result<ImageTensor> {
        codes.check_indices(self.geometry.codebook_size)?;
        let s = self.geometry.pool;
        let (top, bottom) = (codes.top.shape(), codes.bottom.shape());
        if bottom.0 == 0 || bottom.1 == 0 || (top.0 * s, top.1 * s) != bottom {
            return invalid(format!("grid shapes {top:?} / {bottom:?} inconsistent with pool factor {s}"));
        }
        let widen = |g: &Grid| g.indices().iter().map(|&k| usize::from(k)).collect::<Vec<_>>();
        let out = self.decode_patches(top, bottom, &widen(&codes.top), &widen(&codes.bottom));
        self.assemble(bottom, &out)
    }

    /// `decode_codes(encode_image(img))`.
    pub fn roundtrip(&self, img: &ImageTensor) -> Result<ImageTensor> {
        self.decode_codes(&self.encode_image(img)?)
    }

    /// Loss terms and stop-gradient-aware gradients for one image.
    ///
    /// The reconstruction term is measured on the unclamped decoder output. Its gradient
    /// reaches the encoder through the straight-through estimator and never touches the
    /// codebooks. The codebook term moves only the selected codebook rows, and the
    /// commitment term moves only the encoder.
    pub fn loss_terms(&self, x: &ImageTensor) -> Result<VqLoss> {
        let e = self.encode_forward(x)?;
        let g = &self.geometry;
        let (d, pd, s) = (g.dim, g.patch_dim(), g.pool);
        let w = &self.weights;
        let cb_top = &w.codebooks[TOP];
        let cb_bottom = &w.codebooks[BOTTOM];
        let nb = e.k_bottom.len();
        let nt = e.k_top.len();
        let top_of = |j: usize| {
            let (by, bx) = (j / e.bottom_shape.1, j % e.bottom_shape.1);
            (by / s) * e.top_shape.1 + bx / s
        };

        // Reconstruction.
        let y = self.decode_patches(e.top_shape, e.bottom_shape, &e.k_top, &e.k_bottom);
        let mut recon_grads = CodecWeights::zeros(g);
        let mut reconstruction = 0.0;
        let mut g_zb = vec![0.0; nb * d];
        let mut g_zt = vec![0.0; nt * d];
        let mut g_y = vec![0.0; pd];
        for j in 0..nb {
            let t = top_of(j);
            for ((gy, yv), xv) in g_y.iter_mut().zip(&y[j * pd..(j + 1) * pd]).zip(&e.patches[j * pd..(j + 1) * pd]) {
                let r = yv - xv;
                reconstruction += r * r;
                *gy = 2.0 * r;
            }
            recon_grads.dec_bottom.accumulate(cb_bottom.row(e.k_bottom[j]), &g_y);
            recon_grads.dec_top.accumulate(cb_top.row(e.k_top[t]), &g_y);
            // Straight-through: decoder-input gradients land on the encoder outputs.
            w.dec_bottom.backward_input(&g_y, &mut g_zb[j * d..(j + 1) * d]);
            w.dec_top.backward_input(&g_y, &mut g_zt[t * d..(t + 1) * d]);
        }
        self.backprop_encoder(&e, g_zb, &g_zt, &mut recon_grads);

        // Codebook term: ||sg[z_e] - c_k||^2, gradient on codebook rows only.
        let mut codebook_grads = CodecWeights::zeros(g);
        let mut codebook = 0.0;
        for (level, zs, ks) in [(BOTTOM, &e.z_bottom, &e.k_bottom), (TOP, &e.z_top, &e.k_top)] {
            let cb = &w.codebooks[level];
            for (z, &k) in zs.chunks_exact(d).zip(ks.iter()) {
                let c = cb.row(k);
                codebook += squared_distance(z, c);
                for ((gr, cv), zv) in codebook_grads.codebooks[level].row_mut(k).iter_mut().zip(c).zip(z) {
                    *gr += 2.0 * (cv - zv);
                }
            }
        }

        // Commitment term: beta ||sg[c_k] - z_e||^2, gradient on the encoder only.
        let mut commitment_grads = CodecWeights::zeros(g);
        let beta = self.beta;
        let residual = |zs: &[f64], ks: &[usize], cb: &Codebook| -> Vec<f64> {
            zs.chunks_exact(d)
                .zip(ks)
                .flat_map(|(z, &k)| z.iter().zip(cb.row(k)).map(|(zv, cv)| 2.0 * beta * (zv - cv)).collect::<Vec<_>>())
                .collect()
        };
        let g_zb = residual(&e.z_bottom, &e.k_bottom, cb_bottom);
        let g_zt = residual(&e.z_top, &e.k_top, cb_top);
        let commitment = beta * codebook;
        self.backprop_encoder(&e, g_zb, &g_zt, &mut commitment_grads);

        Ok(VqLoss {
            reconstruction,
            codebook,
            commitment,
            reconstruction_grads: recon_grads,
            codebook_grads,
            commitment_grads,
        })
    }

    /// Reconstruction loss of the straight-through forward pass `z + (c - z_anchor)`, where
    /// the codes, codebook rows `c`, and `z_anchor` come from `anchor` and `z` from `self`.
    ///
    /// At `self == anchor` this equals the reconstruction term, and its derivative with
    /// respect to the encoder and decoder weights is the reconstruction gradient.
    pub fn straight_through_loss(&self, x: &ImageTensor, anchor: &CodecParams) -> Result<f64> {
        if self.geometry != anchor.geometry {
            return invalid("anchor codec has a different geometry");
        }
        let a = anchor.encode_forward(x)?;
        let e = self.encode_forward(x)?;
        let d = self.geometry.dim;
        let shift = |level: usize, ks: &[usize], z: &[f64], za: &[f64]| -> Vec<f64> {
            let cb = &anchor.weights.codebooks[level];
            ks.iter()
                .enumerate()
                .flat_map(|(i, &k)| (0..d).map(move |j| cb.row(k)[j] + z[i * d + j] - za[i * d + j]))
                .collect()
        };
        let top_in = shift(TOP, &a.k_top, &e.z_top, &a.z_top);
        let bottom_in = shift(BOTTOM, &a.k_bottom, &e.z_bottom, &a.z_bottom);
        let y = self.decode_inputs(a.top_shape, a.bottom_shape, &top_in, &bottom_in);
        Ok(y.iter().zip(&a.patches).map(|(y, x)| (y - x) * (y - x)).sum())
    }

    /// Pushes gradients on the bottom and top encoder outputs back into the encoder weights.
    fn backprop_encoder(&self, e: &Encoded, mut g_zb: Vec<f64>, g_zt: &[f64], grads: &mut CodecWeights) {
        let d = self.geometry.dim;
        let s = self.geometry.pool;
        let pd = self.geometry.patch_dim();
        let scale = 1.0 / (s * s) as f64;
        let mut g_pool = vec![0.0; d];
        for (t, gz) in g_zt.chunks_exact(d).enumerate() {
            grads.enc_top.accumulate(&e.pooled[t * d..(t + 1) * d], gz);
            g_pool.iter_mut().for_each(|v| *v = 0.0);
            self.weights.enc_top.backward_input(gz, &mut g_pool);
            let (ty, tx) = (t / e.top_shape.1, t % e.top_shape.1);
            for by in ty * s..(ty + 1) * s {
                for bx in tx * s..(tx + 1) * s {
                    let j = by * e.bottom_shape.1 + bx;
                    for (a, b) in g_zb[j * d..(j + 1) * d].iter_mut().zip(&g_pool) {
                        *a += scale * b;
                    }
                }
            }
        }
        for (patch, gz) in e.patches.chunks_exact(pd).zip(g_zb.chunks_exact(d)) {
            grads.enc_bottom.accumulate(patch, gz);
        }
    }

    /// Mean total loss over a dataset.
    pub fn mean_loss(&self, dataset: &[ImageTensor]) -> Result<f64> {
        if dataset.is_empty() {
            return invalid("empty dataset");
        }
        let mut sum = 0.0;
        for x in dataset {
            sum += self.loss_terms(x)?.total();
        }
        Ok(sum / dataset.len() as f64)
    }

    /// Mean per-pixel squared error of the clamped codec round trip.
    pub fn reconstruction_mse(&self, dataset: &[ImageTensor]) -> Result<f64> {
        if dataset.is_empty() {
            return invalid("empty dataset");
        }
        let mut sum = 0.0;
        for x in dataset {
            sum += self.roundtrip(x)?.mse(x);
        }
        Ok(sum / dataset.len() as f64)
    }

    /// Full-batch gradient descent on the mean loss with a constant step size.
    ///
    /// Returns the mean loss measured before each step.
    pub fn train(&mut self, dataset: &[ImageTensor], lr: f64, epochs: usize) -> Result<Vec<f64>> {
        if self.frozen {
            return Err(DrrError::State("cannot train a frozen codec".into()));
        }
        let Some(first) = dataset.first() else {
            return invalid("empty training set");
        };
        if dataset.iter().any(|x| x.shape() != first.shape()) {
            return invalid("training images must share one shape");
        }
        self.geometry.check_image(first)?;

        let inv_n = 1.0 / dataset.len() as f64;
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut grads = CodecWeights::zeros(&self.geometry);
            let mut loss = 0.0;
            for x in dataset {
                let terms = self.loss_terms(x)?;
                loss += terms.total();
                grads.axpy(inv_n, &terms.reconstruction_grads);
                grads.axpy(inv_n, &terms.codebook_grads);
                grads.axpy(inv_n, &terms.commitment_grads);
            }
            if !loss.is_finite() {
                return Err(DrrError::Degenerate(format!("codec training diverged at learning rate {lr}")));
            }
            history.push(loss * inv_n);
            self.weights.axpy(-lr, &grads);
        }
        Ok(history)
    }
}

/// Encodes and decodes one image's loss; see [`CodecParams::loss_terms`].
pub fn vq_loss_terms(x: &ImageTensor, params: &CodecParams) -> Result<VqLoss> {
    params.loss_terms(x)
}

/// Total loss and summed gradients for one image.
pub fn vq_loss_and_grads(x: &ImageTensor, params: &CodecParams) -> Result<(f64, CodecWeights)> {
    let terms = params.loss_terms(x)?;
    Ok((terms.total(), terms.total_grads()))
}

/// Seeded initialization followed by `config.epochs` of gradient descent.
pub fn train_codec(dataset: &[ImageTensor], config: &CodecConfig) -> Result<CodecParams> {
    if dataset.is_empty() {
        return invalid("empty training set");
    }
    let mut params = CodecParams::init(config.geometry, config.beta, config.seed)?;
    params.train(dataset, config.lr, config.epochs)?;
    Ok(params)
}
