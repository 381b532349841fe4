//! Residual search space: configuration, genome encoding and decoding, and
//! exact MACs / parameter accounting.
//!
//! A genome is stored as choice *indices* into the configured depth,
//! expansion and width sets. That keeps equality, hashing and ordering exact
//! (no float comparisons) and makes crossover and mutation trivial. The
//! human-readable ratio form lives in [`GenomeRatios`].

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Search-space definition for a configurable residual supernet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpaceConfig {
    pub num_stages: usize,
    /// Full-width output channels per stage.
    pub base_channels: Vec<usize>,
    /// Full-width stem output channels; scaled by the stem width gene.
    pub stem_channels: usize,
    pub depth_choices: Vec<usize>,
    pub width_choices: Vec<f64>,
    pub expansion_choices: Vec<f64>,
    pub input_resolution: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub stage_strides: Vec<usize>,
    /// Channel counts are rounded to a multiple of this. `1` is plain
    /// round-half-up.
    pub channel_divisor: usize,
    pub kernel_size: usize,
}

impl Default for SearchSpaceConfig {
    fn default() -> Self {
        Self {
            num_stages: 4,
            base_channels: vec![256, 512, 1024, 2048],
            stem_channels: 64,
            depth_choices: vec![1, 2, 3],
            width_choices: (1..=10).map(|i| i as f64 / 10.0).collect(),
            expansion_choices: vec![0.1, 0.14, 0.18, 0.22, 0.25],
            input_resolution: 32,
            input_channels: 3,
            num_classes: 10,
            stage_strides: vec![1, 2, 2, 2],
            channel_divisor: 8,
            kernel_size: 3,
        }
    }
}

impl SearchSpaceConfig {
    /// Block slots per stage; equals the largest depth choice.
    pub fn max_blocks_per_stage(&self) -> usize {
        self.depth_choices.iter().copied().max().unwrap_or(0)
    }

    pub fn depth_len(&self) -> usize {
        self.num_stages
    }

    pub fn expansion_len(&self) -> usize {
        self.num_stages * self.max_blocks_per_stage()
    }

    pub fn width_len(&self) -> usize {
        self.num_stages + 1
    }

    /// Length of the flat `d ‖ e ‖ w` genome.
    pub fn genome_len(&self) -> usize {
        self.depth_len() + self.expansion_len() + self.width_len()
    }

    /// Number of choices available at each flat genome position.
    pub fn choice_counts(&self) -> Vec<usize> {
        let mut counts = vec![self.depth_choices.len(); self.depth_len()];
        counts.extend(std::iter::repeat_n(self.expansion_choices.len(), self.expansion_len()));
        counts.extend(std::iter::repeat_n(self.width_choices.len(), self.width_len()));
        counts
    }

    /// Exact number of distinct genomes.
    pub fn space_size(&self) -> u128 {
        self.choice_counts().iter().map(|&c| c as u128).product()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.num_stages;
        if s == 0 {
            return Err(Error::Config("num_stages must be at least 1".into()));
        }
        if self.base_channels.len() != s {
            return Err(Error::Config(format!("base_channels has {} entries, expected {s}", self.base_channels.len())));
        }
        if self.stage_strides.len() != s {
            return Err(Error::Config(format!("stage_strides has {} entries, expected {s}", self.stage_strides.len())));
        }
        if self.base_channels.contains(&0) || self.stem_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.stage_strides.contains(&0) {
            return Err(Error::Config("strides must be positive".into()));
        }
        if self.input_resolution == 0 || self.input_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config("input resolution, channels and classes must be positive".into()));
        }
        if self.kernel_size == 0 || self.channel_divisor == 0 {
            return Err(Error::Config("kernel_size and channel_divisor must be positive".into()));
        }
        if self.depth_choices.is_empty() || self.depth_choices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("depth_choices must be non-empty and strictly ascending".into()));
        }
        if self.depth_choices[0] == 0 {
            return Err(Error::Config("depth choices must be at least 1".into()));
        }
        for (name, set) in [("width_choices", &self.width_choices), ("expansion_choices", &self.expansion_choices)] {
            if set.is_empty() || set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{name} must be non-empty and strictly ascending")));
            }
            if set.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
                return Err(Error::Config(format!("{name} ratios must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Architecture genome as indices into the choice sets of a
/// [`SearchSpaceConfig`]. Expansion genes for block slots beyond a stage's
/// depth are carried but ignored by [`decode`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchGenome {
    pub depth: Vec<usize>,
    pub expansion: Vec<usize>,
    pub width: Vec<usize>,
}

impl ArchGenome {
    /// Every gene at choice index 0.
    pub fn min(cfg: &SearchSpaceConfig) -> Self {
        Self {
            depth: vec![0; cfg.depth_len()],
            expansion: vec![0; cfg.expansion_len()],
            width: vec![0; cfg.width_len()],
        }
    }

    /// Every gene at its largest choice.
    pub fn max(cfg: &SearchSpaceConfig) -> Self {
        Self {
            depth: vec![cfg.depth_choices.len() - 1; cfg.depth_len()],
            expansion: vec![cfg.expansion_choices.len() - 1; cfg.expansion_len()],
            width: vec![cfg.width_choices.len() - 1; cfg.width_len()],
        }
    }

    /// Flat `d ‖ e ‖ w` layout used by crossover.
    pub fn to_flat(&self) -> Vec<usize> {
        let mut flat = Vec::with_capacity(self.depth.len() + self.expansion.len() + self.width.len());
        flat.extend_from_slice(&self.depth);
        flat.extend_from_slice(&self.expansion);
        flat.extend_from_slice(&self.width);
        flat
    }

    pub fn from_flat(cfg: &SearchSpaceConfig, flat: &[usize]) -> Result<Self> {
        if flat.len() != cfg.genome_len() {
            return Err(Error::ShapeMismatch(format!(
                "flat genome has {} genes, expected {}",
                flat.len(),
                cfg.genome_len()
            )));
        }
        let (d, rest) = flat.split_at(cfg.depth_len());
        let (e, w) = rest.split_at(cfg.expansion_len());
        Ok(Self { depth: d.to_vec(), expansion: e.to_vec(), width: w.to_vec() })
    }

    pub fn depth_values(&self, cfg: &SearchSpaceConfig) -> Vec<usize> {
        self.depth.iter().map(|&i| cfg.depth_choices[i]).collect()
    }

    pub fn expansion_values(&self, cfg: &SearchSpaceConfig) -> Vec<f64> {
        self.expansion.iter().map(|&i| cfg.expansion_choices[i]).collect()
    }

    pub fn width_values(&self, cfg: &SearchSpaceConfig) -> Vec<f64> {
        self.width.iter().map(|&i| cfg.width_choices[i]).collect()
    }

    fn check_shape(&self, cfg: &SearchSpaceConfig) -> Result<()> {
        let expect = [cfg.depth_len(), cfg.expansion_len(), cfg.width_len()];
        let got = [self.depth.len(), self.expansion.len(), self.width.len()];
        if expect != got {
            return Err(Error::ShapeMismatch(format!("genome lengths (d, e, w) = {got:?}, expected {expect:?}")));
        }
        Ok(())
    }
}

/// Human-readable genome: actual depths and ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeRatios {
    pub d: Vec<usize>,
    pub e: Vec<f64>,
    pub w: Vec<f64>,
}

impl GenomeRatios {
    /// Panics if `genome` holds an out-of-range index; call [`validate`] first
    /// on untrusted input.
    pub fn from_genome(genome: &ArchGenome, cfg: &SearchSpaceConfig) -> Self {
        Self { d: genome.depth_values(cfg), e: genome.expansion_values(cfg), w: genome.width_values(cfg) }
    }

    pub fn to_genome(&self, cfg: &SearchSpaceConfig) -> Result<ArchGenome> {
        fn index_of_ratio(set: &[f64], v: f64, what: &str) -> Result<usize> {
            set.iter()
                .position(|&c| (c - v).abs() <= 1e-9)
                .ok_or_else(|| Error::InvalidGene(format!("{what} value {v} is not in {set:?}")))
        }
        let expect = [cfg.depth_len(), cfg.expansion_len(), cfg.width_len()];
        let got = [self.d.len(), self.e.len(), self.w.len()];
        if expect != got {
            return Err(Error::ShapeMismatch(format!("ratio lengths {got:?}, expected {expect:?}")));
        }
        let depth = self
            .d
            .iter()
            .map(|&v| {
                cfg.depth_choices
                    .iter()
                    .position(|&c| c == v)
                    .ok_or_else(|| Error::InvalidGene(format!("depth {v} is not in {:?}", cfg.depth_choices)))
            })
            .collect::<Result<_>>()?;
        let expansion =
            self.e.iter().map(|&v| index_of_ratio(&cfg.expansion_choices, v, "expansion")).collect::<Result<_>>()?;
        let width = self.w.iter().map(|&v| index_of_ratio(&cfg.width_choices, v, "width")).collect::<Result<_>>()?;
        Ok(ArchGenome { depth, expansion, width })
    }
}

/// True iff the genome has the configured lengths and every index is in range.
pub fn validate(genome: &ArchGenome, cfg: &SearchSpaceConfig) -> bool {
    genome.check_shape(cfg).is_ok()
        && genome.depth.iter().all(|&i| i < cfg.depth_choices.len())
        && genome.expansion.iter().all(|&i| i < cfg.expansion_choices.len())
        && genome.width.iter().all(|&i| i < cfg.width_choices.len())
}

/// Same predicate on the ratio form.
pub fn validate_ratios(ratios: &GenomeRatios, cfg: &SearchSpaceConfig) -> bool {
    ratios.to_genome(cfg).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Stem,
    /// First conv of a block: block input to bottleneck width.
    BlockReduce,
    /// Second conv of a block: bottleneck width to stage width.
    BlockExpand,
    ShortcutProjection,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub resolution_out: usize,
    /// Stage and block slot, for stage layers.
    pub stage: Option<usize>,
    pub block: Option<usize>,
}

impl LayerSpec {
    pub fn is_conv(&self) -> bool {
        self.kind != LayerKind::Classifier
    }

    pub fn macs(&self) -> u64 {
        let dense = self.c_in as u64 * self.c_out as u64;
        if self.is_conv() {
            let k = self.kernel as u64;
            let r = self.resolution_out as u64;
            dense * k * k * r * r
        } else {
            dense
        }
    }

    pub fn params(&self) -> u64 {
        let k = self.kernel as u64;
        self.c_in as u64 * self.c_out as u64 * k * k
    }
}

/// Decoded, per-layer form of a genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchInstance {
    pub layers: Vec<LayerSpec>,
    /// Index range into `layers` for each stage.
    pub stage_boundaries: Vec<Range<usize>>,
    pub stem_width: usize,
    pub stage_widths: Vec<usize>,
    pub stage_resolutions: Vec<usize>,
    pub depths: Vec<usize>,
}

impl ArchInstance {
    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_conv())
    }

    pub fn stage_layers(&self, stage: usize) -> &[LayerSpec] {
        &self.layers[self.stage_boundaries[stage].clone()]
    }

    /// Stem width followed by each stage's output width.
    pub fn width_profile(&self) -> Vec<usize> {
        std::iter::once(self.stem_width).chain(self.stage_widths.iter().copied()).collect()
    }
}

/// Nearest multiple of `divisor` (at least `divisor`), bumped up one step if
/// that would lose more than 10% of `value`. `divisor == 1` is round-half-up
/// clamped to 1.
pub fn round_channels(value: f64, divisor: usize) -> usize {
    let d = divisor.max(1) as f64;
    let mut rounded = (((value + d / 2.0) / d).floor() * d).max(d);
    if divisor > 1 && rounded < 0.9 * value {
        rounded += d;
    }
    rounded as usize
}

pub fn decode(genome: &ArchGenome, cfg: &SearchSpaceConfig) -> Result<ArchInstance> {
    genome.check_shape(cfg)?;
    if !validate(genome, cfg) {
        return Err(Error::InvalidGene("genome index out of range".into()));
    }
    let round = |v: f64| round_channels(v, cfg.channel_divisor);
    let k = cfg.kernel_size;
    let slots = cfg.max_blocks_per_stage();

    let mut layers = Vec::new();
    let mut resolution = cfg.input_resolution;
    let stem_width = round(cfg.width_choices[genome.width[0]] * cfg.stem_channels as f64);
    layers.push(LayerSpec {
        kind: LayerKind::Stem,
        c_in: cfg.input_channels,
        c_out: stem_width,
        kernel: k,
        stride: 1,
        resolution_out: resolution,
        stage: None,
        block: None,
    });

    let mut c_in = stem_width;
    let mut stage_boundaries = Vec::with_capacity(cfg.num_stages);
    let mut stage_widths = Vec::with_capacity(cfg.num_stages);
    let mut stage_resolutions = Vec::with_capacity(cfg.num_stages);
    let depths = genome.depth_values(cfg);
    for (stage, &depth) in depths.iter().enumerate() {
        let c_out = round(cfg.width_choices[genome.width[stage + 1]] * cfg.base_channels[stage] as f64);
        let start = layers.len();
        for block in 0..depth {
            let stride = if block == 0 { cfg.stage_strides[stage] } else { 1 };
            let r_out = resolution.div_ceil(stride);
            let ratio = cfg.expansion_choices[genome.expansion[stage * slots + block]];
            let mid = round(ratio * c_out as f64);
            let at = |kind, c_in, c_out, kernel, stride| LayerSpec {
                kind,
                c_in,
                c_out,
                kernel,
                stride,
                resolution_out: r_out,
                stage: Some(stage),
                block: Some(block),
            };
            layers.push(at(LayerKind::BlockReduce, c_in, mid, k, stride));
            layers.push(at(LayerKind::BlockExpand, mid, c_out, k, 1));
            if block == 0 {
                layers.push(at(LayerKind::ShortcutProjection, c_in, c_out, 1, stride));
            }
            c_in = c_out;
            resolution = r_out;
        }
        stage_boundaries.push(start..layers.len());
        stage_widths.push(c_out);
        stage_resolutions.push(resolution);
    }
    layers.push(LayerSpec {
        kind: LayerKind::Classifier,
        c_in,
        c_out: cfg.num_classes,
        kernel: 1,
        stride: 1,
        resolution_out: 1,
        stage: None,
        block: None,
    });

    Ok(ArchInstance { layers, stage_boundaries, stem_width, stage_widths, stage_resolutions, depths })
}

pub fn macs(instance: &ArchInstance) -> u64 {
    instance.layers.iter().map(LayerSpec::macs).sum()
}

pub fn params(instance: &ArchInstance) -> u64 {
    instance.layers.iter().map(LayerSpec::params).sum()
}

pub fn random_genome<R: Rng + ?Sized>(cfg: &SearchSpaceConfig, rng: &mut R) -> ArchGenome {
    let mut draw = |len: usize, n: usize| (0..len).map(|_| rng.random_range(0..n)).collect::<Vec<_>>();
    let depth = draw(cfg.depth_len(), cfg.depth_choices.len());
    let expansion = draw(cfg.expansion_len(), cfg.expansion_choices.len());
    let width = draw(cfg.width_len(), cfg.width_choices.len());
    ArchGenome { depth, expansion, width }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceBounds {
    pub min_macs: u64,
    pub max_macs: u64,
    pub min_params: u64,
    pub max_params: u64,
}

/// MACs and params are monotone in every gene, so the all-min and all-max
/// genomes are the extremes.
pub fn space_bounds(cfg: &SearchSpaceConfig) -> Result<SpaceBounds> {
    cfg.validate()?;
    let lo = decode(&ArchGenome::min(cfg), cfg)?;
    let hi = decode(&ArchGenome::max(cfg), cfg)?;
    Ok(SpaceBounds { min_macs: macs(&lo), max_macs: macs(&hi), min_params: params(&lo), max_params: params(&hi) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(cfg: &SearchSpaceConfig, d: usize, e: usize, w: usize) -> ArchGenome {
        ArchGenome {
            depth: vec![d; cfg.depth_len()],
            expansion: vec![e; cfg.expansion_len()],
            width: vec![w; cfg.width_len()],
        }
    }

    #[test]
    fn decode_minimal_depth_full_width() {
        let cfg = SearchSpaceConfig::default();
        let g = uniform(&cfg, 0, 4, 9);
        let inst = decode(&g, &cfg).unwrap();
        assert_eq!(inst.stage_widths, vec![256, 512, 1024, 2048]);
        let mids: Vec<_> = inst.layers.iter().filter(|l| l.kind == LayerKind::BlockReduce).map(|l| l.c_out).collect();
        assert_eq!(mids, vec![64, 128, 256, 512]);
        assert_eq!(inst.stage_resolutions, vec![32, 16, 8, 4]);
    }

    #[test]
    fn decode_max_depth_has_twelve_blocks() {
        let cfg = SearchSpaceConfig::default();
        let inst = decode(&uniform(&cfg, 2, 4, 9), &cfg).unwrap();
        let blocks = inst.layers.iter().filter(|l| l.kind == LayerKind::BlockReduce).count();
        assert_eq!(blocks, 12);
        // stem + 12 blocks x 2 convs + 4 projections + classifier
        assert_eq!(inst.layers.len(), 1 + 24 + 4 + 1);
    }

    #[test]
    fn narrow_stage_width_rounding() {
        let mut cfg = SearchSpaceConfig::default();
        let mut g = uniform(&cfg, 0, 0, 9);
        g.width[3] = 0; // w3 = 0.1 on base 1024
        assert_eq!(decode(&g, &cfg).unwrap().stage_widths[2], 104);
        cfg.channel_divisor = 1;
        assert_eq!(decode(&g, &cfg).unwrap().stage_widths[2], 102);
    }

    #[test]
    fn round_channels_cases() {
        assert_eq!(round_channels(102.4, 1), 102);
        assert_eq!(round_channels(2.5, 1), 3);
        assert_eq!(round_channels(0.2, 1), 1);
        assert_eq!(round_channels(102.4, 8), 104);
        assert_eq!(round_channels(2.4, 8), 8);
        assert_eq!(round_channels(25.6, 8), 24);
        assert_eq!(round_channels(64.0, 8), 64);
    }

    #[test]
    fn inactive_expansion_genes_are_ignored() {
        let cfg = SearchSpaceConfig::default();
        let a = uniform(&cfg, 0, 2, 5);
        let mut b = a.clone();
        b.expansion[1] = 0;
        b.expansion[2] = 4;
        assert_eq!(decode(&a, &cfg).unwrap(), decode(&b, &cfg).unwrap());
    }

    #[test]
    fn decode_rejects_wrong_shape() {
        let cfg = SearchSpaceConfig::default();
        let mut g = ArchGenome::min(&cfg);
        g.expansion.pop();
        assert!(matches!(decode(&g, &cfg), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn validate_cases() {
        let cfg = SearchSpaceConfig::default();
        let mut ratios = GenomeRatios::from_genome(&ArchGenome::min(&cfg), &cfg);
        ratios.d[0] = 5;
        assert!(!validate_ratios(&ratios, &cfg));

        let mut g = ArchGenome::min(&cfg);
        g.expansion.truncate(11);
        assert!(!validate(&g, &cfg));

        let mut g = ArchGenome::min(&cfg);
        g.width[2] = 10;
        assert!(!validate(&g, &cfg));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert!(validate(&random_genome(&cfg, &mut rng), &cfg));
        }
    }

    #[test]
    fn ratio_form_round_trips() {
        let cfg = SearchSpaceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_genome(&cfg, &mut rng);
        let r = GenomeRatios::from_genome(&g, &cfg);
        assert_eq!(r.to_genome(&cfg).unwrap(), g);
        assert_eq!(ArchGenome::from_flat(&cfg, &g.to_flat()).unwrap(), g);
    }

    #[test]
    fn single_conv_accounting() {
        let l = LayerSpec {
            kind: LayerKind::Stem,
            c_in: 3,
            c_out: 16,
            kernel: 3,
            stride: 1,
            resolution_out: 32,
            stage: None,
            block: None,
        };
        assert_eq!(l.macs(), 442_368);
        assert_eq!(l.params(), 432);
    }

    #[test]
    fn random_genome_is_deterministic_and_uniform() {
        let cfg = SearchSpaceConfig::default();
        let a = random_genome(&cfg, &mut ChaCha8Rng::seed_from_u64(42));
        let b = random_genome(&cfg, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[random_genome(&cfg, &mut rng).depth[0]] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn default_space_size() {
        let size = SearchSpaceConfig::default().space_size();
        assert_eq!(size, 81 * 244_140_625 * 100_000);
        assert!((size as f64 / 1.98e15 - 1.0).abs() < 0.005);
    }

    #[test]
    fn singleton_space_has_equal_bounds() {
        let cfg = SearchSpaceConfig {
            depth_choices: vec![1],
            width_choices: vec![1.0],
            expansion_choices: vec![0.25],
            ..Default::default()
        };
        let b = space_bounds(&cfg).unwrap();
        assert_eq!(b.min_macs, b.max_macs);
        assert_eq!(b.min_params, b.max_params);
    }

    #[test]
    fn config_validation() {
        assert!(SearchSpaceConfig::default().validate().is_ok());
        let bad = SearchSpaceConfig { width_choices: vec![0.5, 0.2], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SearchSpaceConfig { base_channels: vec![8, 16], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SearchSpaceConfig { expansion_choices: vec![0.0, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
