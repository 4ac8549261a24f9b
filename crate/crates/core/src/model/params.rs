//! Parameter storage: per-band encoder weights plus the shared summarization
//! head. One fixed traversal order drives init, flattening, optimizer state
//! and checkpoints, so all of them agree bit for bit.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FredformerConfig, ModelError};

/// One encoder block: pre-norm attention and feed-forward sub-layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    /// `(M, heads*head_dim)` query/key/value projections.
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    /// `(heads*head_dim, M)` output projection.
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    /// `(M, mlp_dim)` and `(mlp_dim, M)` feed-forward maps.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Weights owned by one band (or shared by all bands).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandParams {
    /// `(2S, M)` token embedding.
    pub embed_w: Array2<f64>,
    pub embed_b: Array1<f64>,
    pub blocks: Vec<BlockParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// One entry per band, or a single shared entry.
    pub bands: Vec<BandParams>,
    /// `(N*M, 2*output_bins)` summarization head.
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

enum Init<'a> {
    Zeros,
    Seeded(&'a mut ChaCha8Rng),
}

impl Init<'_> {
    /// Uniform Xavier bounds for weight matrices; ones/zeros elsewhere.
    fn weight(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        match self {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Seeded(rng) => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
            }
        }
    }

    fn gain(&mut self, len: usize) -> Array1<f64> {
        match self {
            Init::Zeros => Array1::zeros(len),
            Init::Seeded(_) => Array1::ones(len),
        }
    }

    fn bias(&mut self, len: usize) -> Array1<f64> {
        Array1::zeros(len)
    }
}

fn build_block(cfg: &FredformerConfig, init: &mut Init) -> BlockParams {
    let m = cfg.embed_dim;
    let d = cfg.attn_width();
    BlockParams {
        ln1_gamma: init.gain(m),
        ln1_beta: init.bias(m),
        wq: init.weight(m, d),
        bq: init.bias(d),
        wk: init.weight(m, d),
        bk: init.bias(d),
        wv: init.weight(m, d),
        bv: init.bias(d),
        wo: init.weight(d, m),
        bo: init.bias(m),
        ln2_gamma: init.gain(m),
        ln2_beta: init.bias(m),
        w1: init.weight(m, cfg.mlp_dim),
        b1: init.bias(cfg.mlp_dim),
        w2: init.weight(cfg.mlp_dim, m),
        b2: init.bias(m),
    }
}

fn build(cfg: &FredformerConfig, mut init: Init) -> ModelParams {
    let stored_bands = if cfg.share_band_weights { 1 } else { cfg.num_bands() };
    let bands = (0..stored_bands)
        .map(|_| BandParams {
            embed_w: init.weight(cfg.token_width(), cfg.embed_dim),
            embed_b: init.bias(cfg.embed_dim),
            blocks: (0..cfg.depth).map(|_| build_block(cfg, &mut init)).collect(),
        })
        .collect();
    let head_in = cfg.num_bands() * cfg.embed_dim;
    let head_out = 2 * cfg.output_bins();
    ModelParams {
        bands,
        head_w: init.weight(head_in, head_out),
        head_b: init.bias(head_out),
    }
}

impl ModelParams {
    /// Seeded Xavier init; the same config and seed always produce the same
    /// parameters.
    pub fn init(cfg: &FredformerConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(build(cfg, Init::Seeded(&mut rng)))
    }

    /// All-zero parameters with the config's shapes; gradient accumulators.
    pub fn zeros(cfg: &FredformerConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(build(cfg, Init::Zeros))
    }

    /// Weights of band `n`, honoring sharing.
    pub fn band(&self, n: usize) -> &BandParams {
        if self.bands.len() == 1 {
            &self.bands[0]
        } else {
            &self.bands[n]
        }
    }

    pub(crate) fn band_mut(&mut self, n: usize) -> &mut BandParams {
        if self.bands.len() == 1 {
            &mut self.bands[0]
        } else {
            &mut self.bands[n]
        }
    }

    /// Visit every parameter slice in the canonical traversal order.
    pub(crate) fn visit<'a>(&'a self, f: &mut impl FnMut(&'a [f64])) {
        for band in &self.bands {
            f(band.embed_w.as_slice().expect("standard layout"));
            f(band.embed_b.as_slice().expect("standard layout"));
            for b in &band.blocks {
                for arr1 in [&b.ln1_gamma, &b.ln1_beta] {
                    f(arr1.as_slice().expect("standard layout"));
                }
                f(b.wq.as_slice().expect("standard layout"));
                f(b.bq.as_slice().expect("standard layout"));
                f(b.wk.as_slice().expect("standard layout"));
                f(b.bk.as_slice().expect("standard layout"));
                f(b.wv.as_slice().expect("standard layout"));
                f(b.bv.as_slice().expect("standard layout"));
                f(b.wo.as_slice().expect("standard layout"));
                f(b.bo.as_slice().expect("standard layout"));
                f(b.ln2_gamma.as_slice().expect("standard layout"));
                f(b.ln2_beta.as_slice().expect("standard layout"));
                f(b.w1.as_slice().expect("standard layout"));
                f(b.b1.as_slice().expect("standard layout"));
                f(b.w2.as_slice().expect("standard layout"));
                f(b.b2.as_slice().expect("standard layout"));
            }
        }
        f(self.head_w.as_slice().expect("standard layout"));
        f(self.head_b.as_slice().expect("standard layout"));
    }

    pub(crate) fn visit_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        for band in &mut self.bands {
            f(band.embed_w.as_slice_mut().expect("standard layout"));
            f(band.embed_b.as_slice_mut().expect("standard layout"));
            for b in &mut band.blocks {
                f(b.ln1_gamma.as_slice_mut().expect("standard layout"));
                f(b.ln1_beta.as_slice_mut().expect("standard layout"));
                f(b.wq.as_slice_mut().expect("standard layout"));
                f(b.bq.as_slice_mut().expect("standard layout"));
                f(b.wk.as_slice_mut().expect("standard layout"));
                f(b.bk.as_slice_mut().expect("standard layout"));
                f(b.wv.as_slice_mut().expect("standard layout"));
                f(b.bv.as_slice_mut().expect("standard layout"));
                f(b.wo.as_slice_mut().expect("standard layout"));
                f(b.bo.as_slice_mut().expect("standard layout"));
                f(b.ln2_gamma.as_slice_mut().expect("standard layout"));
                f(b.ln2_beta.as_slice_mut().expect("standard layout"));
                f(b.w1.as_slice_mut().expect("standard layout"));
                f(b.b1.as_slice_mut().expect("standard layout"));
                f(b.w2.as_slice_mut().expect("standard layout"));
                f(b.b2.as_slice_mut().expect("standard layout"));
            }
        }
        f(self.head_w.as_slice_mut().expect("standard layout"));
        f(self.head_b.as_slice_mut().expect("standard layout"));
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    /// Encoder-only parameter count (everything but the head).
    pub fn encoder_param_count(&self) -> usize {
        self.param_count() - self.head_w.len() - self.head_b.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0usize;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    /// Named views of every array, traversal order; checkpoint schema.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        fn entry1(name: String, a: &Array1<f64>) -> (String, Vec<usize>, Vec<f64>) {
            (name, a.shape().to_vec(), a.to_vec())
        }
        fn entry2(name: String, a: &Array2<f64>) -> (String, Vec<usize>, Vec<f64>) {
            (name, a.shape().to_vec(), a.iter().cloned().collect())
        }
        let mut out = Vec::new();
        for (n, band) in self.bands.iter().enumerate() {
            let pre = format!("band{n}");
            out.push(entry2(format!("{pre}.embed_w"), &band.embed_w));
            out.push(entry1(format!("{pre}.embed_b"), &band.embed_b));
            for (d, b) in band.blocks.iter().enumerate() {
                let bp = format!("{pre}.block{d}");
                out.push(entry1(format!("{bp}.ln1_gamma"), &b.ln1_gamma));
                out.push(entry1(format!("{bp}.ln1_beta"), &b.ln1_beta));
                out.push(entry2(format!("{bp}.wq"), &b.wq));
                out.push(entry1(format!("{bp}.bq"), &b.bq));
                out.push(entry2(format!("{bp}.wk"), &b.wk));
                out.push(entry1(format!("{bp}.bk"), &b.bk));
                out.push(entry2(format!("{bp}.wv"), &b.wv));
                out.push(entry1(format!("{bp}.bv"), &b.bv));
                out.push(entry2(format!("{bp}.wo"), &b.wo));
                out.push(entry1(format!("{bp}.bo"), &b.bo));
                out.push(entry1(format!("{bp}.ln2_gamma"), &b.ln2_gamma));
                out.push(entry1(format!("{bp}.ln2_beta"), &b.ln2_beta));
                out.push(entry2(format!("{bp}.w1"), &b.w1));
                out.push(entry1(format!("{bp}.b1"), &b.b1));
                out.push(entry2(format!("{bp}.w2"), &b.w2));
                out.push(entry1(format!("{bp}.b2"), &b.b2));
            }
        }
        out.push(entry2("head.w".into(), &self.head_w));
        out.push(entry1("head.b".into(), &self.head_b));
        out
    }

    /// Expected parameter count from config arithmetic alone.
    pub fn expected_count(cfg: &FredformerConfig) -> usize {
        let m = cfg.embed_dim;
        let d = cfg.attn_width();
        let block = 2 * m                       // ln1
            + 3 * (m * d + d)                   // q, k, v
            + d * m + m                         // output projection
            + 2 * m                             // ln2
            + m * cfg.mlp_dim + cfg.mlp_dim     // ff in
            + cfg.mlp_dim * m + m; // ff out
        let band = cfg.token_width() * m + m + cfg.depth * block;
        let stored = if cfg.share_band_weights { 1 } else { cfg.num_bands() };
        let head = cfg.num_bands() * m * 2 * cfg.output_bins() + 2 * cfg.output_bins();
        stored * band + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(share: bool, patch_len: usize) -> FredformerConfig {
        let mut c = FredformerConfig::new(4, 96, 96, patch_len);
        c.share_band_weights = share;
        c
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let c = cfg(false, 8);
        let a = ModelParams::init(&c).unwrap();
        let b = ModelParams::init(&c).unwrap();
        assert_eq!(a, b);
        let mut c2 = c.clone();
        c2.seed = 1;
        assert_ne!(a, ModelParams::init(&c2).unwrap());
    }

    #[test]
    fn flat_roundtrip_is_identity() {
        let c = cfg(false, 16);
        let params = ModelParams::init(&c).unwrap();
        let flat = params.to_flat();
        assert_eq!(flat.len(), params.param_count());
        let mut other = ModelParams::zeros(&c).unwrap();
        other.assign_from_flat(&flat);
        assert_eq!(other, params);
    }

    #[test]
    fn param_count_matches_config_arithmetic() {
        for share in [false, true] {
            for patch_len in [8, 16, 48] {
                let c = cfg(share, patch_len);
                let params = ModelParams::init(&c).unwrap();
                assert_eq!(
                    params.param_count(),
                    ModelParams::expected_count(&c),
                    "share={share} S={patch_len}"
                );
            }
        }
    }

    #[test]
    fn encoder_count_scales_linearly_in_bands_unless_shared() {
        // S=8 -> N=6, S=16 -> N=3: per-band storage must scale 2x... relative
        // to per-band cost; shared storage must not change at all.
        let per_band = |share: bool, patch: usize| {
            let c = cfg(share, patch);
            let p = ModelParams::init(&c).unwrap();
            let embed = c.token_width() * c.embed_dim + c.embed_dim;
            (p.encoder_param_count() - if share { embed } else { c.num_bands() * embed }, c.num_bands())
        };
        let (blocks6, n6) = per_band(false, 8);
        let (blocks3, n3) = per_band(false, 16);
        assert_eq!(blocks6 / n6, blocks3 / n3);
        assert_eq!(blocks6, 2 * blocks3);
        let (shared6, _) = per_band(true, 8);
        let (shared3, _) = per_band(true, 16);
        assert_eq!(shared6, shared3);
        assert_eq!(shared6, blocks6 / n6);
    }

    #[test]
    fn named_arrays_cover_every_parameter() {
        let c = cfg(false, 8);
        let params = ModelParams::init(&c).unwrap();
        let total: usize = params.named_arrays().iter().map(|(_, _, data)| data.len()).sum();
        assert_eq!(total, params.param_count());
    }

    #[test]
    fn finite_check_catches_poison() {
        let c = cfg(true, 8);
        let mut params = ModelParams::init(&c).unwrap();
        assert!(params.all_finite());
        params.head_w[[0, 0]] = f64::NAN;
        assert!(!params.all_finite());
    }
}
