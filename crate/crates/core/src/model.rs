//! Full architecture assembly: Siamese two-branch encoder with shared
//! weights, per-level fusion, channel-aware decoder and classifier, plus
//! analytic parameter and FLOP accounting over the same graph.

use serde::{Deserialize, Serialize};

use crate::analysis::{scan_flops, MAC};
use crate::blocks::{
    cavssb, downsample, patch_stem, vssb, CavssbWeights, DownsampleWeights, StemWeights,
    VssbWeights, BLOCK_EXPAND, CHANNEL_ATTN_REDUCTION, PATCH,
};
use crate::error::{Result, SigmaError};
use crate::fusion::{
    conmb, cromb, ConmbWeights, CrombBranchWeights, CrombWeights, CrossExchangeMode, ModalityPair,
    CROMB_EXPAND,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::scan2d::DirectionalParams;
use crate::ssm::{delta_rank_for, ContinuousSsm, SelectionProjections, SelectiveSsmParams};
use crate::tensor::{linear, silu, upsample_bilinear, DenseArray, FeatureMap};

/// How the two modality pyramids are combined at each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Full,
    CrombOnly,
    ConmbOnly,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    #[default]
    Cavssb,
    Mlp,
}

/// Complete architecture description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaConfig {
    pub stage_depths: [usize; 4],
    pub stage_dims: [usize; 4],
    pub state_size: usize,
    pub decoder_depths: [usize; 3],
    pub num_classes: usize,
    #[serde(default)]
    pub fusion_mode: FusionMode,
    #[serde(default)]
    pub decoder_kind: DecoderKind,
    #[serde(default)]
    pub cross_mode: CrossExchangeMode,
}

impl SigmaConfig {
    pub fn tiny(num_classes: usize) -> Self {
        SigmaConfig {
            stage_depths: [2, 2, 9, 2],
            stage_dims: [96, 192, 384, 768],
            state_size: 4,
            decoder_depths: [4, 4, 4],
            num_classes,
            fusion_mode: FusionMode::Full,
            decoder_kind: DecoderKind::Cavssb,
            cross_mode: CrossExchangeMode::C,
        }
    }

    pub fn small(num_classes: usize) -> Self {
        SigmaConfig {
            stage_depths: [2, 2, 27, 2],
            ..Self::tiny(num_classes)
        }
    }

    pub fn base(num_classes: usize) -> Self {
        SigmaConfig {
            stage_depths: [2, 2, 27, 2],
            stage_dims: [128, 256, 512, 1024],
            ..Self::tiny(num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(SigmaError::config("num_classes must be >= 1"));
        }
        if self.state_size == 0 {
            return Err(SigmaError::config("state_size must be >= 1"));
        }
        for k in 0..3 {
            if self.stage_dims[k + 1] != 2 * self.stage_dims[k] {
                return Err(SigmaError::config(format!(
                    "stage_dims must double per stage (patch merging), got {:?}",
                    self.stage_dims
                )));
            }
        }
        Ok(())
    }

    /// (H, W, C) of each pyramid level for an input of the given size.
    pub fn pyramid_shapes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize, usize)>> {
        check_input_extents(h, w)?;
        Ok((0..4)
            .map(|k| (h >> (k + 2), w >> (k + 2), self.stage_dims[k]))
            .collect())
    }
}

fn check_input_extents(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(32) || !w.is_multiple_of(32) {
        return Err(SigmaError::config(format!(
            "input extents {h}x{w} must be positive multiples of 32"
        )));
    }
    Ok(())
}

/// Four pyramid levels at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
#[derive(Debug, Clone)]
pub struct StageFeatures<T> {
    pub levels: Vec<FeatureMap<T>>,
}

/// Per-pixel class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    pub labels: Vec<u32>,
}

/// How a tensor is filled at initialization time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Truncated normal, sigma = 0.02.
    Projection,
    Zeros,
    Ones,
    /// S4D-real pattern ln(n + 1) over the trailing state axis.
    ALog,
    /// Inverse softplus of a step sampled uniformly in [1e-3, 0.1].
    DeltaBias,
}

/// Produces every weight tensor during model construction. The builder walks
/// tensors in one fixed order, so a single implementation serves
/// initialization, bundle loading, and shape/parameter enumeration.
pub trait WeightSource<T: Scalar> {
    fn tensor(&mut self, name: &str, shape: &[usize], init: InitKind) -> Result<DenseArray<T>>;
}

/// Seeded initializer; also records (name, tensor) pairs in visit order so a
/// freshly initialized model can be serialized.
pub struct InitSource<T> {
    rng: Rng,
    pub recorded: Vec<(String, DenseArray<T>)>,
    record: bool,
}

impl<T: Scalar> InitSource<T> {
    pub fn new(seed: u64, record: bool) -> Self {
        InitSource {
            rng: Rng::new(seed),
            recorded: Vec::new(),
            record,
        }
    }
}

impl<T: Scalar> WeightSource<T> for InitSource<T> {
    fn tensor(&mut self, name: &str, shape: &[usize], init: InitKind) -> Result<DenseArray<T>> {
        let state = shape.last().copied().unwrap_or(1);
        let arr = match init {
            InitKind::Projection => {
                DenseArray::from_fn(shape.to_vec(), |_| T::from_f64(self.rng.trunc_normal(0.02)))
            }
            InitKind::Zeros => DenseArray::zeros(shape.to_vec()),
            InitKind::Ones => DenseArray::full(shape.to_vec(), T::ONE),
            InitKind::ALog => DenseArray::from_fn(shape.to_vec(), |i| {
                T::from_f64((((i % state) + 1) as f64).ln())
            }),
            InitKind::DeltaBias => DenseArray::from_fn(shape.to_vec(), |_| {
                // softplus(bias) lands in [1e-3, 0.1]
                let dt = self.rng.uniform_in(1e-3, 0.1);
                T::from_f64((dt.exp() - 1.0).ln())
            }),
        };
        if self.record {
            self.recorded.push((name.to_string(), arr.clone()));
        }
        Ok(arr)
    }
}

/// Records names and shapes without materializing values; used for counting
/// and for bundle manifest validation.
#[derive(Default)]
pub struct SpecSource {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl<T: Scalar> WeightSource<T> for SpecSource {
    fn tensor(&mut self, name: &str, shape: &[usize], _init: InitKind) -> Result<DenseArray<T>> {
        self.entries.push((name.to_string(), shape.to_vec()));
        Ok(DenseArray::zeros(shape.to_vec()))
    }
}

/// Serves tensors from a loaded name -> array map, verifying shapes.
pub struct MapSource<T> {
    pub map: std::collections::HashMap<String, DenseArray<T>>,
}

impl<T: Scalar> WeightSource<T> for MapSource<T> {
    fn tensor(&mut self, name: &str, shape: &[usize], _init: InitKind) -> Result<DenseArray<T>> {
        let arr = self
            .map
            .remove(name)
            .ok_or_else(|| SigmaError::config(format!("weight bundle is missing tensor '{name}'")))?;
        if arr.shape() != shape {
            return Err(SigmaError::config(format!(
                "weight '{name}' has shape {:?}, config expects {:?}",
                arr.shape(),
                shape
            )));
        }
        Ok(arr)
    }
}

/// All weights of one model instance.
#[derive(Debug, Clone)]
pub struct SigmaWeights<T> {
    pub stem: StemWeights<T>,
    /// stage -> blocks
    pub stages: Vec<Vec<VssbWeights<T>>>,
    pub downsamples: Vec<DownsampleWeights<T>>,
    pub cromb: Vec<CrombWeights<T>>,
    pub conmb: Vec<ConmbWeights<T>>,
    /// group -> blocks (empty for the MLP decoder)
    pub decoder_groups: Vec<Vec<CavssbWeights<T>>>,
    /// (C_k, C_{k-1}) channel projections after each upsample
    pub decoder_proj: Vec<(DenseArray<T>, DenseArray<T>)>,
    pub cls_w1: DenseArray<T>,
    pub cls_b1: DenseArray<T>,
    pub cls_w2: DenseArray<T>,
    pub cls_b2: DenseArray<T>,
}

fn source_ssm<T: Scalar, S: WeightSource<T>>(
    src: &mut S,
    prefix: &str,
    width: usize,
    state: usize,
) -> Result<SelectiveSsmParams<T>> {
    let rank = delta_rank_for(width);
    let a_log = src.tensor(&format!("{prefix}.a_log"), &[width, state], InitKind::ALog)?;
    let d_skip = src.tensor(&format!("{prefix}.d_skip"), &[width], InitKind::Ones)?;
    let proj = SelectionProjections {
        w_b: src.tensor(&format!("{prefix}.w_b"), &[width, state], InitKind::Projection)?,
        w_c: src.tensor(&format!("{prefix}.w_c"), &[width, state], InitKind::Projection)?,
        w_delta_down: src.tensor(
            &format!("{prefix}.w_dt_down"),
            &[width, rank],
            InitKind::Projection,
        )?,
        w_delta_up: src.tensor(
            &format!("{prefix}.w_dt_up"),
            &[rank, width],
            InitKind::Projection,
        )?,
        delta_bias: src.tensor(&format!("{prefix}.dt_bias"), &[width], InitKind::DeltaBias)?,
    };
    SelectiveSsmParams::new(ContinuousSsm::new(a_log, d_skip)?, proj)
}

fn source_directional<T: Scalar, S: WeightSource<T>>(
    src: &mut S,
    prefix: &str,
    width: usize,
    state: usize,
) -> Result<DirectionalParams<T>> {
    let dirs = [
        source_ssm(src, &format!("{prefix}.dir0"), width, state)?,
        source_ssm(src, &format!("{prefix}.dir1"), width, state)?,
        source_ssm(src, &format!("{prefix}.dir2"), width, state)?,
        source_ssm(src, &format!("{prefix}.dir3"), width, state)?,
    ];
    DirectionalParams::new(dirs)
}

fn source_vssb<T: Scalar, S: WeightSource<T>>(
    src: &mut S,
    prefix: &str,
    c: usize,
    state: usize,
) -> Result<VssbWeights<T>> {
    let e = c * BLOCK_EXPAND;
    Ok(VssbWeights {
        ln_gamma: src.tensor(&format!("{prefix}.ln.g"), &[c], InitKind::Ones)?,
        ln_beta: src.tensor(&format!("{prefix}.ln.b"), &[c], InitKind::Zeros)?,
        w_in: src.tensor(&format!("{prefix}.w_in"), &[c, e], InitKind::Projection)?,
        b_in: src.tensor(&format!("{prefix}.b_in"), &[e], InitKind::Zeros)?,
        dw_kernel: src.tensor(&format!("{prefix}.dw"), &[3, 3, e], InitKind::Projection)?,
        w_gate: src.tensor(&format!("{prefix}.w_gate"), &[c, e], InitKind::Projection)?,
        b_gate: src.tensor(&format!("{prefix}.b_gate"), &[e], InitKind::Zeros)?,
        w_out: src.tensor(&format!("{prefix}.w_out"), &[e, c], InitKind::Projection)?,
        b_out: src.tensor(&format!("{prefix}.b_out"), &[c], InitKind::Zeros)?,
        scans: source_directional(src, &format!("{prefix}.ss2d"), e, state)?,
    })
}

fn source_cromb_branch<T: Scalar, S: WeightSource<T>>(
    src: &mut S,
    prefix: &str,
    c: usize,
    state: usize,
) -> Result<CrombBranchWeights<T>> {
    let e = c * CROMB_EXPAND;
    Ok(CrombBranchWeights {
        ln_gamma: src.tensor(&format!("{prefix}.ln.g"), &[c], InitKind::Ones)?,
        ln_beta: src.tensor(&format!("{prefix}.ln.b"), &[c], InitKind::Zeros)?,
        w_in: src.tensor(&format!("{prefix}.w_in"), &[c, e], InitKind::Projection)?,
        b_in: src.tensor(&format!("{prefix}.b_in"), &[e], InitKind::Zeros)?,
        dw_kernel: src.tensor(&format!("{prefix}.dw"), &[3, 3, e], InitKind::Projection)?,
        w_gate: src.tensor(&format!("{prefix}.w_gate"), &[c, e], InitKind::Projection)?,
        b_gate: src.tensor(&format!("{prefix}.b_gate"), &[e], InitKind::Zeros)?,
        w_out: src.tensor(&format!("{prefix}.w_out"), &[e, c], InitKind::Projection)?,
        b_out: src.tensor(&format!("{prefix}.b_out"), &[c], InitKind::Zeros)?,
        scans: [
            source_ssm(src, &format!("{prefix}.dir0"), e, state)?,
            source_ssm(src, &format!("{prefix}.dir1"), e, state)?,
            source_ssm(src, &format!("{prefix}.dir2"), e, state)?,
            source_ssm(src, &format!("{prefix}.dir3"), e, state)?,
        ],
    })
}

fn source_conmb<T: Scalar, S: WeightSource<T>>(
    src: &mut S,
    prefix: &str,
    c: usize,
    state: usize,
) -> Result<ConmbWeights<T>> {
    Ok(ConmbWeights {
        w_rgb: src.tensor(&format!("{prefix}.w_rgb"), &[c, c], InitKind::Projection)?,
        b_rgb: src.tensor(&format!("{prefix}.b_rgb"), &[c], InitKind::Zeros)?,
        w_x: src.tensor(&format!("{prefix}.w_x"), &[c, c], InitKind::Projection)?,
        b_x: src.tensor(&format!("{prefix}.b_x"), &[c], InitKind::Zeros)?,
        dw_rgb: src.tensor(&format!("{prefix}.dw_rgb"), &[3, 3, c], InitKind::Projection)?,
        dw_x: src.tensor(&format!("{prefix}.dw_x"), &[3, 3, c], InitKind::Projection)?,
        scan: source_ssm(src, &format!("{prefix}.scan"), c, state)?,
        s_rgb: src
            .tensor(&format!("{prefix}.s_rgb"), &[1], InitKind::Ones)?
            .data()[0],
        s_x: src.tensor(&format!("{prefix}.s_x"), &[1], InitKind::Ones)?.data()[0],
        w_proj: src.tensor(&format!("{prefix}.w_proj"), &[2 * c, c], InitKind::Projection)?,
        b_proj: src.tensor(&format!("{prefix}.b_proj"), &[c], InitKind::Zeros)?,
    })
}

/// Build the full weight container by pulling every tensor from `src` in a
/// fixed order. This function is the single definition of the weight layout.
pub fn build_weights<T: Scalar, S: WeightSource<T>>(
    cfg: &SigmaConfig,
    src: &mut S,
) -> Result<SigmaWeights<T>> {
    cfg.validate()?;
    let n = cfg.state_size;
    let stem = StemWeights {
        w: src.tensor("stem.w", &[PATCH * PATCH * 3, cfg.stage_dims[0]], InitKind::Projection)?,
        b: src.tensor("stem.b", &[cfg.stage_dims[0]], InitKind::Zeros)?,
    };
    let mut stages = Vec::new();
    let mut downsamples = Vec::new();
    for k in 0..4 {
        let c = cfg.stage_dims[k];
        let mut blocks = Vec::new();
        for i in 0..cfg.stage_depths[k] {
            blocks.push(source_vssb(src, &format!("enc.s{k}.b{i}"), c, n)?);
        }
        stages.push(blocks);
        if k < 3 {
            downsamples.push(DownsampleWeights {
                ln_gamma: src.tensor(&format!("enc.down{k}.ln.g"), &[4 * c], InitKind::Ones)?,
                ln_beta: src.tensor(&format!("enc.down{k}.ln.b"), &[4 * c], InitKind::Zeros)?,
                w: src.tensor(&format!("enc.down{k}.w"), &[4 * c, 2 * c], InitKind::Projection)?,
                b: src.tensor(&format!("enc.down{k}.b"), &[2 * c], InitKind::Zeros)?,
            });
        }
    }

    let mut cromb_levels = Vec::new();
    let mut conmb_levels = Vec::new();
    for k in 0..4 {
        let c = cfg.stage_dims[k];
        if matches!(cfg.fusion_mode, FusionMode::Full | FusionMode::CrombOnly) {
            cromb_levels.push(CrombWeights {
                rgb: source_cromb_branch(src, &format!("fuse.l{k}.cromb.rgb"), c, n)?,
                x_mod: source_cromb_branch(src, &format!("fuse.l{k}.cromb.x"), c, n)?,
                mode: cfg.cross_mode,
            });
        }
        if matches!(cfg.fusion_mode, FusionMode::Full | FusionMode::ConmbOnly) {
            conmb_levels.push(source_conmb(src, &format!("fuse.l{k}.conmb"), c, n)?);
        }
    }

    let mut decoder_groups = Vec::new();
    let mut decoder_proj = Vec::new();
    for g in 0..3 {
        let c = cfg.stage_dims[3 - g];
        if cfg.decoder_kind == DecoderKind::Cavssb {
            let hidden = (c / CHANNEL_ATTN_REDUCTION).max(1);
            let mut blocks = Vec::new();
            for i in 0..cfg.decoder_depths[g] {
                let prefix = format!("dec.g{g}.b{i}");
                blocks.push(CavssbWeights {
                    core: source_vssb(src, &format!("{prefix}.core"), c, n)?,
                    mlp_w1: src.tensor(&format!("{prefix}.mlp_w1"), &[c, hidden], InitKind::Projection)?,
                    mlp_b1: src.tensor(&format!("{prefix}.mlp_b1"), &[hidden], InitKind::Zeros)?,
                    mlp_w2: src.tensor(&format!("{prefix}.mlp_w2"), &[hidden, c], InitKind::Projection)?,
                    mlp_b2: src.tensor(&format!("{prefix}.mlp_b2"), &[c], InitKind::Zeros)?,
                });
            }
            decoder_groups.push(blocks);
        }
        let c_next = cfg.stage_dims[2 - g];
        decoder_proj.push((
            src.tensor(&format!("dec.proj{g}.w"), &[c, c_next], InitKind::Projection)?,
            src.tensor(&format!("dec.proj{g}.b"), &[c_next], InitKind::Zeros)?,
        ));
    }
    let c1 = cfg.stage_dims[0];
    let cls_w1 = src.tensor("cls.w1", &[c1, c1], InitKind::Projection)?;
    let cls_b1 = src.tensor("cls.b1", &[c1], InitKind::Zeros)?;
    let cls_w2 = src.tensor("cls.w2", &[c1, cfg.num_classes], InitKind::Projection)?;
    let cls_b2 = src.tensor("cls.b2", &[cfg.num_classes], InitKind::Zeros)?;

    Ok(SigmaWeights {
        stem,
        stages,
        downsamples,
        cromb: cromb_levels,
        conmb: conmb_levels,
        decoder_groups,
        decoder_proj,
        cls_w1,
        cls_b1,
        cls_w2,
        cls_b2,
    })
}

/// Ordered (name, tensor) pairs as written to a weight bundle.
pub type NamedTensors<T> = Vec<(String, DenseArray<T>)>;

/// Deterministic random weights for a seed; returns the container plus the
/// ordered (name, tensor) list for serialization.
pub fn init_weights<T: Scalar>(
    cfg: &SigmaConfig,
    seed: u64,
) -> Result<(SigmaWeights<T>, NamedTensors<T>)> {
    let mut src = InitSource::new(seed, true);
    let weights = build_weights(cfg, &mut src)?;
    Ok((weights, src.recorded))
}

/// Ordered (name, shape) listing of every weight tensor for a config.
pub fn weight_spec(cfg: &SigmaConfig) -> Result<Vec<(String, Vec<usize>)>> {
    let mut src = SpecSource::default();
    let _ = build_weights::<f32, _>(cfg, &mut src)?;
    Ok(src.entries)
}

/// Total number of learnable scalars.
pub fn count_params(cfg: &SigmaConfig) -> Result<usize> {
    Ok(weight_spec(cfg)?
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum())
}

fn encode_branch<T: Scalar>(
    image: &DenseArray<T>,
    w: &SigmaWeights<T>,
) -> Result<StageFeatures<T>> {
    let mut levels = Vec::with_capacity(4);
    let mut f = patch_stem(image, &w.stem)?;
    for (k, blocks) in w.stages.iter().enumerate() {
        for b in blocks {
            f = vssb(&f, b)?;
        }
        levels.push(f.clone());
        if k < 3 {
            f = downsample(&f, &w.downsamples[k])?;
        }
    }
    Ok(StageFeatures { levels })
}

/// Run both modalities through the same encoder weights.
pub fn encode_siamese<T: Scalar>(
    i_rgb: &DenseArray<T>,
    i_x: &DenseArray<T>,
    w: &SigmaWeights<T>,
) -> Result<(StageFeatures<T>, StageFeatures<T>)> {
    if i_rgb.shape() != i_x.shape() {
        return Err(SigmaError::dim(format!(
            "modality images differ: {:?} vs {:?}",
            i_rgb.shape(),
            i_x.shape()
        )));
    }
    if i_rgb.rank() != 3 || i_rgb.shape()[2] != 3 {
        return Err(SigmaError::dim(format!(
            "encoder input must be (H, W, 3), got {:?}",
            i_rgb.shape()
        )));
    }
    check_input_extents(i_rgb.shape()[0], i_rgb.shape()[1])?;
    Ok((encode_branch(i_rgb, w)?, encode_branch(i_x, w)?))
}

/// Combine the two pyramids level by level according to the fusion mode.
pub fn fuse_levels<T: Scalar>(
    pyr_rgb: &StageFeatures<T>,
    pyr_x: &StageFeatures<T>,
    w: &SigmaWeights<T>,
    cfg: &SigmaConfig,
) -> Result<StageFeatures<T>> {
    if pyr_rgb.levels.len() != 4 || pyr_x.levels.len() != 4 {
        return Err(SigmaError::dim("fusion expects four pyramid levels"));
    }
    let mut fused = Vec::with_capacity(4);
    for k in 0..4 {
        let pair = ModalityPair::new(pyr_rgb.levels[k].clone(), pyr_x.levels[k].clone())?;
        let out = match cfg.fusion_mode {
            FusionMode::Sum => pair.rgb.add(&pair.x_mod)?,
            FusionMode::ConmbOnly => conmb(&pair, &w.conmb[k])?,
            FusionMode::CrombOnly => {
                let (f_rgb, f_x) = cromb(&pair, &w.cromb[k])?;
                FeatureMap::new(f_rgb.array().add(f_x.array())?.scale(T::from_f64(0.5)))?
            }
            FusionMode::Full => {
                let (f_rgb, f_x) = cromb(&pair, &w.cromb[k])?;
                conmb(&ModalityPair::new(f_rgb, f_x)?, &w.conmb[k])?
            }
        };
        fused.push(out);
    }
    Ok(StageFeatures { levels: fused })
}

/// Decode the fused pyramid to class logits at 1/4 input resolution.
pub fn decode<T: Scalar>(
    fused: &StageFeatures<T>,
    w: &SigmaWeights<T>,
    cfg: &SigmaConfig,
) -> Result<DenseArray<T>> {
    if fused.levels.len() != 4 {
        return Err(SigmaError::dim("decoder expects four fused levels"));
    }
    let mut cur = fused.levels[3].clone();
    for g in 0..3 {
        if cfg.decoder_kind == DecoderKind::Cavssb {
            for b in &w.decoder_groups[g] {
                cur = cavssb(&cur, b)?;
            }
        }
        let up = upsample_bilinear(cur.array(), 2)?;
        let (pw, pb) = &w.decoder_proj[g];
        let projected = linear(&up, pw, Some(pb))?;
        cur = FeatureMap::new(projected)?.add(&fused.levels[2 - g])?;
    }
    let hidden = silu(&linear(cur.array(), &w.cls_w1, Some(&w.cls_b1))?);
    linear(&hidden, &w.cls_w2, Some(&w.cls_b2))
}

/// Logits for a modality pair at 1/4 input resolution.
pub fn forward_logits<T: Scalar>(
    i_rgb: &DenseArray<T>,
    i_x: &DenseArray<T>,
    w: &SigmaWeights<T>,
    cfg: &SigmaConfig,
) -> Result<DenseArray<T>> {
    let (pyr_rgb, pyr_x) = encode_siamese(i_rgb, i_x, w)?;
    let fused = fuse_levels(&pyr_rgb, &pyr_x, w, cfg)?;
    decode(&fused, w, cfg)
}

/// Logits when only the RGB branch drives the decoder (the fused pyramid is
/// the RGB pyramid itself).
pub fn forward_logits_rgb_only<T: Scalar>(
    i_rgb: &DenseArray<T>,
    w: &SigmaWeights<T>,
    cfg: &SigmaConfig,
) -> Result<DenseArray<T>> {
    let i_copy = i_rgb.clone();
    let (pyr_rgb, _) = encode_siamese(i_rgb, &i_copy, w)?;
    decode(&pyr_rgb, w, cfg)
}

/// Upsample logits to input resolution and take the per-pixel argmax.
/// Ties break toward the lowest class index.
pub fn predict<T: Scalar>(
    i_rgb: &DenseArray<T>,
    i_x: &DenseArray<T>,
    w: &SigmaWeights<T>,
    cfg: &SigmaConfig,
) -> Result<SegmentationMap> {
    let logits = forward_logits(i_rgb, i_x, w, cfg)?;
    logits_to_labels(&logits, cfg)
}

/// Shared tail of `predict`: upsample by 4 and argmax.
pub fn logits_to_labels<T: Scalar>(
    logits: &DenseArray<T>,
    cfg: &SigmaConfig,
) -> Result<SegmentationMap> {
    let up = upsample_bilinear(logits, PATCH)?;
    let (h, w, k) = (up.shape()[0], up.shape()[1], up.shape()[2]);
    if k != cfg.num_classes {
        return Err(SigmaError::dim(format!(
            "logit channels {k} != num_classes {}",
            cfg.num_classes
        )));
    }
    let mut labels = Vec::with_capacity(h * w);
    for px in up.data().chunks(k) {
        let mut best = 0usize;
        for (j, v) in px.iter().enumerate() {
            if *v > px[best] {
                best = j;
            }
        }
        labels.push(best as u32);
    }
    Ok(SegmentationMap {
        h,
        w,
        num_classes: cfg.num_classes,
        labels,
    })
}

// ---------------------------------------------------------------------------
// analytic FLOP model
// ---------------------------------------------------------------------------

/// Named FLOP totals for one forward pass.
#[derive(Debug, Clone)]
pub struct ModelFlops {
    /// (term, flops) in graph order
    pub terms: Vec<(String, f64)>,
    /// subtotal of every selective-scan related term (linear in sequence length)
    pub scan_flops: f64,
    pub total: f64,
}

impl ModelFlops {
    pub fn gflops(&self) -> f64 {
        self.total / 1e9
    }
}

fn vssb_flops(tokens: usize, c: usize, n: usize) -> (f64, f64) {
    let e = c * BLOCK_EXPAND;
    let (l, cf, ef) = (tokens as f64, c as f64, e as f64);
    let mut linear_part = 0.0;
    linear_part += 6.0 * l * cf; // layer norm
    linear_part += MAC * l * cf * ef * 2.0; // in + gate projections
    linear_part += MAC * 9.0 * l * ef; // depthwise conv
    linear_part += 4.0 * l * ef * 2.0; // two silus
    linear_part += MAC * l * ef * cf; // out projection
    linear_part += 2.0 * l * ef + l * cf; // gating product + residual
    let scans = 4.0 * scan_flops(tokens, e, n);
    (linear_part, scans)
}

/// Analytic cost of one forward pass at the given input size, under the
/// crate-wide convention (multiply-add = 2 flops, exp = 1 flop).
pub fn count_flops(cfg: &SigmaConfig, h: usize, w: usize) -> Result<ModelFlops> {
    cfg.validate()?;
    check_input_extents(h, w)?;
    let n = cfg.state_size;
    let mut terms: Vec<(String, f64)> = Vec::new();
    let mut scan_total = 0.0;

    let l1 = (h / 4) * (w / 4);
    let c1 = cfg.stage_dims[0];
    // both encoder branches run, so every encoder term is doubled
    terms.push((
        "encoder.stem".into(),
        2.0 * MAC * (l1 * 48 * c1) as f64,
    ));
    let mut enc_linear = 0.0;
    let mut enc_scan = 0.0;
    for k in 0..4 {
        let l = (h >> (k + 2)) * (w >> (k + 2));
        let c = cfg.stage_dims[k];
        let (lin, sc) = vssb_flops(l, c, n);
        enc_linear += 2.0 * cfg.stage_depths[k] as f64 * lin;
        enc_scan += 2.0 * cfg.stage_depths[k] as f64 * sc;
        if k < 3 {
            let l_next = (h >> (k + 3)) * (w >> (k + 3));
            enc_linear += 2.0
                * (MAC * (l_next * 4 * c * 2 * c) as f64 + 6.0 * (l_next * 4 * c) as f64);
        }
    }
    terms.push(("encoder.blocks".into(), enc_linear));
    terms.push(("encoder.scans".into(), enc_scan));
    scan_total += enc_scan;

    let mut fusion_linear = 0.0;
    let mut fusion_scan = 0.0;
    for k in 0..4 {
        let l = (h >> (k + 2)) * (w >> (k + 2));
        let c = cfg.stage_dims[k];
        let (lf, cf) = (l as f64, c as f64);
        if matches!(cfg.fusion_mode, FusionMode::Full | FusionMode::CrombOnly) {
            let e = (c * CROMB_EXPAND) as f64;
            // two branches
            fusion_linear += 2.0
                * (6.0 * lf * cf
                    + MAC * lf * cf * e * 2.0
                    + MAC * 9.0 * lf * e
                    + 4.0 * lf * e * 2.0
                    + MAC * lf * e * cf
                    + 2.0 * lf * e
                    + lf * cf);
            fusion_scan += 2.0 * 4.0 * scan_flops(l, c * CROMB_EXPAND, n);
        }
        if matches!(cfg.fusion_mode, FusionMode::Full | FusionMode::ConmbOnly) {
            fusion_linear += MAC * lf * cf * cf * 2.0; // per-modality projections
            fusion_linear += MAC * 9.0 * lf * cf * 2.0; // depthwise convs
            fusion_scan += 2.0 * scan_flops(2 * l, c, n); // forward + inverse concat scans
            fusion_linear += 2.0 * 2.0 * lf * cf; // output scaling
            fusion_linear += MAC * lf * 2.0 * cf * cf; // channel-concat projection
        }
        if cfg.fusion_mode == FusionMode::Sum {
            fusion_linear += lf * cf;
        }
        if cfg.fusion_mode == FusionMode::CrombOnly {
            fusion_linear += 2.0 * lf * cf; // average of the two branches
        }
    }
    terms.push(("fusion.blocks".into(), fusion_linear));
    terms.push(("fusion.scans".into(), fusion_scan));
    scan_total += fusion_scan;

    let mut dec_linear = 0.0;
    let mut dec_scan = 0.0;
    for g in 0..3 {
        let l = (h >> (5 - g)) * (w >> (5 - g));
        let c = cfg.stage_dims[3 - g];
        if cfg.decoder_kind == DecoderKind::Cavssb {
            let (lin, sc) = vssb_flops(l, c, n);
            let blocks = cfg.decoder_depths[g] as f64;
            let cf = c as f64;
            let hidden = ((c / CHANNEL_ATTN_REDUCTION).max(1)) as f64;
            // pools + shared MLP twice + sigmoid + modulate + residual
            let attn = 2.0 * (l * c) as f64
                + 2.0 * (MAC * 2.0 * cf * hidden + 4.0 * hidden)
                + 3.0 * cf
                + 2.0 * (l * c) as f64;
            dec_linear += blocks * (lin + attn);
            dec_scan += blocks * sc;
        }
        let l_up = (h >> (4 - g)) * (w >> (4 - g));
        let c_next = cfg.stage_dims[2 - g];
        dec_linear += 8.0 * (l_up * c) as f64; // bilinear upsample
        dec_linear += MAC * (l_up * c * c_next) as f64; // channel projection
        dec_linear += (l_up * c_next) as f64; // skip add
    }
    terms.push(("decoder.blocks".into(), dec_linear));
    terms.push(("decoder.scans".into(), dec_scan));
    scan_total += dec_scan;

    let c1f = c1 as f64;
    let cls = MAC * (l1 as f64) * (c1f * c1f + c1f * cfg.num_classes as f64)
        + 4.0 * (l1 as f64) * c1f
        + 8.0 * (h * w * cfg.num_classes) as f64
        + (h * w * cfg.num_classes) as f64; // argmax comparisons
    terms.push(("classifier".into(), cls));

    let total = terms.iter().map(|(_, v)| v).sum();
    Ok(ModelFlops {
        terms,
        scan_flops: scan_total,
        total,
    })
}

/// FNV-1a hash of the canonical config JSON, hex encoded. Stored in weight
/// bundles so a bundle can only load against the config it was built for.
pub fn config_hash(cfg: &SigmaConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    Ok(format!("{hash:016x}"))
}
