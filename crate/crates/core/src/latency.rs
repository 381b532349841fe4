//! Genome featurization, a synthetic device latency oracle, and a small MLP
//! latency predictor trained by mean squared error.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::archspace::{decode, macs, params, ArchGenome, SearchSpaceConfig};
use crate::error::{Error, Result};
use crate::fitness::LatencyPredictor;
use crate::hybrid;
use crate::pareto_cache::config_hash;
use crate::rng::seeded;

pub const MODEL_MAGIC: &[u8; 8] = b"PNASLPM\0";
pub const MODEL_VERSION: u32 = 1;
/// Fewest samples `train_lpm` accepts.
pub const MIN_SAMPLES: usize = 50;

/// Depth, expansion and width values, then GMACs and millions of params.
/// Length `S + S·N_blocks + (S + 1) + 2`.
pub fn featurize(genome: &ArchGenome, cfg: &SearchSpaceConfig) -> Result<Vec<f64>> {
    let inst = decode(genome, cfg)?;
    let mut v: Vec<f64> = genome.depth_values(cfg).into_iter().map(|d| d as f64).collect();
    v.extend(genome.expansion_values(cfg));
    v.extend(genome.width_values(cfg));
    v.push(macs(&inst) as f64 / 1e9);
    v.push(params(&inst) as f64 / 1e6);
    Ok(v)
}

pub fn feature_len(cfg: &SearchSpaceConfig) -> usize {
    cfg.genome_len() + 2
}

/// Linear latency model `a·GMACs + b·layers + c` plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device: String,
    pub ms_per_gmac: f64,
    pub ms_per_layer: f64,
    pub fixed_ms: f64,
    pub noise_ms: f64,
}

impl DeviceProfile {
    /// Compute-bound: latency tracks MACs.
    pub fn cpu_like() -> Self {
        Self { device: "cpu-like".into(), ms_per_gmac: 25.0, ms_per_layer: 0.02, fixed_ms: 0.5, noise_ms: 0.05 }
    }

    /// Overhead-bound: latency is nearly flat across the space.
    pub fn gpu_like() -> Self {
        Self { device: "gpu-like".into(), ms_per_gmac: 0.05, ms_per_layer: 0.0, fixed_ms: 3.8, noise_ms: 0.005 }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "cpu" | "cpu-like" => Ok(Self::cpu_like()),
            "gpu" | "gpu-like" => Ok(Self::gpu_like()),
            other => Err(Error::Config(format!("unknown device profile {other:?} (expected cpu or gpu)"))),
        }
    }
}

/// Noise-free part of the oracle.
pub fn oracle_mean_ms(genome: &ArchGenome, cfg: &SearchSpaceConfig, profile: &DeviceProfile) -> Result<f64> {
    let inst = decode(genome, cfg)?;
    let gmacs = macs(&inst) as f64 / 1e9;
    Ok(profile.ms_per_gmac * gmacs + profile.ms_per_layer * inst.layers.len() as f64 + profile.fixed_ms)
}

/// One synthetic measurement, clamped to stay positive.
pub fn synth_latency_oracle<R: Rng + ?Sized>(
    genome: &ArchGenome,
    cfg: &SearchSpaceConfig,
    profile: &DeviceProfile,
    rng: &mut R,
) -> Result<f64> {
    let noise: f64 = StandardNormal.sample(rng);
    Ok((oracle_mean_ms(genome, cfg, profile)? + profile.noise_ms * noise).max(1e-6))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub genome: ArchGenome,
    pub latency_ms: f64,
    pub device: String,
}

/// `n` random genomes measured on the synthetic oracle.
pub fn generate_samples<R: Rng + ?Sized>(
    cfg: &SearchSpaceConfig,
    profile: &DeviceProfile,
    n: usize,
    rng: &mut R,
) -> Result<Vec<LatencySample>> {
    (0..n)
        .map(|_| {
            let genome = crate::archspace::random_genome(cfg, rng);
            let latency_ms = synth_latency_oracle(&genome, cfg, profile, rng)?;
            Ok(LatencySample { genome, latency_ms, device: profile.device.clone() })
        })
        .collect()
}

fn sample_header(cfg: &SearchSpaceConfig) -> Vec<String> {
    let mut h: Vec<String> = (0..cfg.depth_len()).map(|i| format!("d{i}")).collect();
    h.extend((0..cfg.expansion_len()).map(|i| format!("e{i}")));
    h.extend((0..cfg.width_len()).map(|i| format!("w{i}")));
    h.push("latency_ms".into());
    h.push("device".into());
    h
}

/// Columns `d0.., e0.., w0..` (choice indices), `latency_ms`, `device`.
pub fn write_samples_csv<W: std::io::Write>(samples: &[LatencySample], cfg: &SearchSpaceConfig, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sample_header(cfg))?;
    for s in samples {
        let mut row: Vec<String> = s.genome.to_flat().iter().map(usize::to_string).collect();
        row.push(s.latency_ms.to_string());
        row.push(s.device.clone());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: std::io::Read>(input: R, cfg: &SearchSpaceConfig) -> Result<Vec<LatencySample>> {
    let mut r = csv::Reader::from_reader(input);
    let expected = sample_header(cfg);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != expected {
        return Err(Error::Format(format!("sample header {header:?} does not match the space ({expected:?})")));
    }
    let n = cfg.genome_len();
    r.records()
        .enumerate()
        .map(|(line, rec)| {
            let rec = rec?;
            let bad = |what: &str| Error::Format(format!("row {}: bad {what}", line + 1));
            let flat: Vec<usize> =
                rec.iter().take(n).map(|f| f.parse().map_err(|_| bad("gene"))).collect::<Result<_>>()?;
            let genome = ArchGenome::from_flat(cfg, &flat)?;
            let latency_ms: f64 = rec[n].parse().map_err(|_| bad("latency"))?;
            if !(latency_ms > 0.0 && latency_ms.is_finite()) {
                return Err(bad("latency"));
            }
            Ok(LatencySample { genome, latency_ms, device: rec[n + 1].to_owned() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpmConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; values at or above the training-set size give full
    /// batch descent.
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub optimizer: Optimizer,
    /// Decoupled L2 shrinkage applied each step as `p -= lr·decay·p`.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for LpmConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            validation_fraction: 0.2,
            optimizer: Optimizer::Adam,
            weight_decay: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    #[serde(skip)]
    pub weights: Vec<f64>,
    #[serde(skip)]
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o = self.bias[r] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// Feed-forward regressor with ReLU hidden layers, z-scored inputs and a
/// standardized target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub device: String,
    pub space_hash: String,
    pub feature_mean: Vec<f64>,
    /// Constant features are stored with std 1 and so map to 0.
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub layers: Vec<Dense>,
    pub train_mse: f64,
    pub validation_mse: f64,
}

impl LatencyModel {
    pub fn normalize(&self, features: &[f64]) -> Vec<f64> {
        features.iter().zip(&self.feature_mean).zip(&self.feature_std).map(|((x, m), s)| (x - m) / s).collect()
    }

    fn forward_normalized(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.rows];
            layer.apply(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        self.target_mean + self.target_std * cur[0]
    }

    pub fn predict_features(&self, features: &[f64]) -> f64 {
        self.forward_normalized(&self.normalize(features))
    }

    pub fn predict(&self, genome: &ArchGenome, cfg: &SearchSpaceConfig) -> Result<f64> {
        if self.space_hash != config_hash(cfg) {
            return Err(Error::ModelMismatch("latency model was trained on a different search space".into()));
        }
        let f = featurize(genome, cfg)?;
        if f.len() != self.feature_mean.len() {
            return Err(Error::ModelMismatch("feature length differs from the model input".into()));
        }
        Ok(self.predict_features(&f))
    }

    fn payload(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn write<W: std::io::Write>(&self, out: W) -> Result<()> {
        hybrid::write(out, MODEL_MAGIC, MODEL_VERSION, self, &self.payload())
    }

    pub fn read<R: std::io::Read>(input: R) -> Result<Self> {
        let (mut model, values): (Self, Vec<f64>) = hybrid::read(input, MODEL_MAGIC, MODEL_VERSION)?;
        let expected: usize = model.layers.iter().map(|l| l.rows * l.cols + l.rows).sum();
        if values.len() != expected {
            return Err(Error::Format(format!("model payload holds {} values, expected {expected}", values.len())));
        }
        let mut at = 0;
        for l in &mut model.layers {
            l.weights = values[at..at + l.rows * l.cols].to_vec();
            at += l.rows * l.cols;
            l.bias = values[at..at + l.rows].to_vec();
            at += l.rows;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

impl LatencyPredictor for LatencyModel {
    fn device(&self) -> &str {
        &self.device
    }

    fn predict_ms(&self, genome: &ArchGenome, cfg: &SearchSpaceConfig) -> Result<f64> {
        self.predict(genome, cfg)
    }
}

struct Grads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(layers: &[Dense]) -> Self {
        Self {
            w: layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            b: layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.w.iter_mut().zip(self.b.iter_mut()).flat_map(|(w, b)| [w, b])
    }
}

/// Accumulate the gradient of `(ŷ − y)²` for one sample; returns the error.
fn backprop(layers: &[Dense], x: &[f64], y: f64, g: &mut Grads) -> f64 {
    let mut acts = vec![x.to_vec()];
    for (i, l) in layers.iter().enumerate() {
        let mut z = vec![0.0; l.rows];
        l.apply(acts.last().expect("input activation"), &mut z);
        if i + 1 < layers.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    let err = acts.last().expect("output")[0] - y;
    let mut delta = vec![2.0 * err];
    for i in (0..layers.len()).rev() {
        let l = &layers[i];
        let input = &acts[i];
        for (r, &d) in delta.iter().enumerate() {
            g.b[i][r] += d;
            let gw = &mut g.w[i][r * l.cols..(r + 1) * l.cols];
            gw.iter_mut().zip(input).for_each(|(gw, x)| *gw += d * x);
        }
        if i > 0 {
            let mut prev = vec![0.0; l.cols];
            for (r, &d) in delta.iter().enumerate() {
                let row = &l.weights[r * l.cols..(r + 1) * l.cols];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            // ReLU derivative on the hidden activation.
            prev.iter_mut().zip(input).for_each(|(p, a)| {
                if *a <= 0.0 {
                    *p = 0.0
                }
            });
            delta = prev;
        }
    }
    err
}

fn mse(model_layers: &[Dense], xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let probe = LatencyModel {
        device: String::new(),
        space_hash: String::new(),
        feature_mean: Vec::new(),
        feature_std: Vec::new(),
        target_mean: 0.0,
        target_std: 1.0,
        layers: model_layers.to_vec(),
        train_mse: 0.0,
        validation_mse: 0.0,
    };
    xs.iter().zip(ys).map(|(x, y)| (probe.forward_normalized(x) - y).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Training result with the per-epoch training loss (standardized units).
#[derive(Debug, Clone)]
pub struct LpmFit {
    pub model: LatencyModel,
    pub history: Vec<f64>,
}

pub fn train_lpm(samples: &[LatencySample], cfg: &SearchSpaceConfig, hyper: &LpmConfig) -> Result<LatencyModel> {
    fit_lpm(samples, cfg, hyper).map(|f| f.model)
}

pub fn fit_lpm(samples: &[LatencySample], cfg: &SearchSpaceConfig, hyper: &LpmConfig) -> Result<LpmFit> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData { needed: MIN_SAMPLES, got: samples.len() });
    }
    let device = samples[0].device.clone();
    if samples.iter().any(|s| s.device != device) {
        return Err(Error::Config("latency samples mix several device tags".into()));
    }
    if !(hyper.validation_fraction >= 0.0 && hyper.validation_fraction < 1.0) || hyper.batch_size == 0 {
        return Err(Error::Config("validation_fraction must lie in [0, 1) and batch_size be positive".into()));
    }
    let mut rng = seeded(hyper.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (samples.len() as f64 * hyper.validation_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);

    let features: Vec<Vec<f64>> = samples.iter().map(|s| featurize(&s.genome, cfg)).collect::<Result<_>>()?;
    let dim = features[0].len();
    let column = |j: usize| train_idx.iter().map(|&i| features[i][j]).collect::<Vec<_>>();
    let feature_mean: Vec<f64> = (0..dim).map(|j| crate::stats::mean(&column(j))).collect();
    let feature_std: Vec<f64> = (0..dim)
        .map(|j| {
            let s = crate::stats::std_dev(&column(j));
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let lat: Vec<f64> = train_idx.iter().map(|&i| samples[i].latency_ms).collect();
    let target_mean = crate::stats::mean(&lat);
    // A constant target is stored with std 0, which pins predictions to it.
    let target_std = crate::stats::std_dev(&lat);
    let target_scale = if target_std > 1e-12 { target_std } else { 1.0 };
    let norm = |i: usize| -> Vec<f64> {
        features[i].iter().zip(&feature_mean).zip(&feature_std).map(|((x, m), s)| (x - m) / s).collect()
    };
    let zy = |i: usize| (samples[i].latency_ms - target_mean) / target_scale;
    let (train_x, train_y): (Vec<Vec<f64>>, Vec<f64>) = train_idx.iter().map(|&i| (norm(i), zy(i))).unzip();
    let (val_x, val_y): (Vec<Vec<f64>>, Vec<f64>) = val_idx.iter().map(|&i| (norm(i), zy(i))).unzip();

    let mut sizes = vec![dim];
    sizes.extend(&hyper.hidden);
    sizes.push(1);
    let mut layers: Vec<Dense> = sizes
        .windows(2)
        .map(|w| {
            let (cols, rows) = (w[0], w[1]);
            let he = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive scale");
            Dense {
                rows,
                cols,
                weights: (0..rows * cols).map(|_| he.sample(&mut rng)).collect(),
                bias: vec![0.0; rows],
            }
        })
        .collect();

    let mut adam_m = Grads::zeros(&layers);
    let mut adam_v = Grads::zeros(&layers);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut batch_order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 0..hyper.epochs {
        if hyper.batch_size < batch_order.len() {
            batch_order.shuffle(&mut rng);
        }
        for batch in batch_order.chunks(hyper.batch_size) {
            let mut g = Grads::zeros(&layers);
            for &i in batch {
                backprop(&layers, &train_x[i], train_y[i], &mut g);
            }
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let lr = hyper.learning_rate;
            let params = layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias]);
            let moments = adam_m.params_mut().zip(adam_v.params_mut());
            for ((p, gp), (m, v)) in params.zip(g.params_mut()).zip(moments) {
                for j in 0..p.len() {
                    let grad = gp[j] * scale;
                    p[j] -= lr * hyper.weight_decay * p[j];
                    match hyper.optimizer {
                        Optimizer::Sgd => p[j] -= lr * grad,
                        Optimizer::Adam => {
                            m[j] = b1 * m[j] + (1.0 - b1) * grad;
                            v[j] = b2 * v[j] + (1.0 - b2) * grad * grad;
                            let mh = m[j] / (1.0 - b1.powi(step));
                            let vh = v[j] / (1.0 - b2.powi(step));
                            p[j] -= lr * mh / (vh.sqrt() + eps);
                        }
                    }
                }
            }
        }
        let loss = mse(&layers, &train_x, &train_y);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(loss);
    }
    let var = target_std * target_std;
    let train_mse = history.last().copied().unwrap_or_else(|| mse(&layers, &train_x, &train_y)) * var;
    let validation_mse = if val_x.is_empty() { f64::NAN } else { mse(&layers, &val_x, &val_y) * var };
    Ok(LpmFit {
        model: LatencyModel {
            device,
            space_hash: config_hash(cfg),
            feature_mean,
            feature_std,
            target_mean,
            target_std,
            layers,
            train_mse,
            validation_mse,
        },
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, rmse, spearman};

    fn small_space() -> SearchSpaceConfig {
        SearchSpaceConfig { base_channels: vec![32, 64, 128, 256], stem_channels: 16, ..Default::default() }
    }

    fn linear() -> DeviceProfile {
        DeviceProfile { device: "lin".into(), ms_per_gmac: 400.0, ms_per_layer: 0.0, fixed_ms: 1.0, noise_ms: 0.0 }
    }

    #[test]
    fn feature_layout() {
        let cfg = SearchSpaceConfig::default();
        let g = ArchGenome::max(&cfg);
        let f = featurize(&g, &cfg).unwrap();
        assert_eq!(f.len(), 23);
        assert_eq!(feature_len(&cfg), 23);
        assert_eq!(&f[..4], &[3.0; 4]);
        assert_eq!(f[4], 0.25);
        assert_eq!(f[16], 1.0);
        assert!((f[21] - 3.403370496).abs() < 1e-12);
        assert!((f[22] - 71.68992).abs() < 1e-9);
    }

    #[test]
    fn inactive_expansion_gene_changes_only_its_coordinate() {
        let cfg = SearchSpaceConfig::default();
        let mut a = ArchGenome::min(&cfg); // depth 1: slots 1, 2 inactive
        a.expansion[1] = 0;
        let mut b = a.clone();
        b.expansion[1] = 4;
        let (fa, fb) = (featurize(&a, &cfg).unwrap(), featurize(&b, &cfg).unwrap());
        let differing: Vec<usize> = (0..fa.len()).filter(|&i| fa[i] != fb[i]).collect();
        assert_eq!(differing, vec![4 + 1]);
    }

    #[test]
    fn oracle_examples() {
        let cfg = SearchSpaceConfig::default();
        let g = ArchGenome::max(&cfg);
        let ten =
            DeviceProfile { device: "t".into(), ms_per_gmac: 10.0, ms_per_layer: 0.0, fixed_ms: 0.0, noise_ms: 0.0 };
        let ms = synth_latency_oracle(&g, &cfg, &ten, &mut seeded(0)).unwrap();
        assert!((ms - 34.03370496).abs() < 1e-9);
        let gpu = DeviceProfile::gpu_like();
        let lo = oracle_mean_ms(&ArchGenome::min(&cfg), &cfg, &gpu).unwrap();
        let hi = oracle_mean_ms(&g, &cfg, &gpu).unwrap();
        assert!(lo >= 3.8 && hi <= 4.02, "{lo} {hi}");
    }

    #[test]
    fn sample_csv_round_trip() {
        let cfg = SearchSpaceConfig::default();
        let samples = generate_samples(&cfg, &DeviceProfile::cpu_like(), 5, &mut seeded(1)).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&samples, &cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("d0,d1,d2,d3,e0,"));
        assert!(text.lines().next().unwrap().ends_with("w4,latency_ms,device"));
        assert_eq!(read_samples_csv(&buf[..], &cfg).unwrap(), samples);
    }

    #[test]
    fn rejects_too_few_or_mixed_samples() {
        let cfg = SearchSpaceConfig::default();
        let mut s = generate_samples(&cfg, &DeviceProfile::cpu_like(), 49, &mut seeded(2)).unwrap();
        assert!(matches!(train_lpm(&s, &cfg, &LpmConfig::default()), Err(Error::InsufficientData { .. })));
        s.extend(generate_samples(&cfg, &DeviceProfile::gpu_like(), 10, &mut seeded(3)).unwrap());
        assert!(matches!(train_lpm(&s, &cfg, &LpmConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn fits_noiseless_linear_oracle() {
        let cfg = small_space();
        let profile = linear();
        let train = generate_samples(&cfg, &profile, 1000, &mut seeded(4)).unwrap();
        let test = generate_samples(&cfg, &profile, 100, &mut seeded(5)).unwrap();
        let model = train_lpm(&train, &cfg, &LpmConfig::default()).unwrap();
        let pred: Vec<f64> = test.iter().map(|s| model.predict(&s.genome, &cfg).unwrap()).collect();
        let truth: Vec<f64> = test.iter().map(|s| s.latency_ms).collect();
        let rel = rmse(&pred, &truth) / mean(&truth);
        assert!(rel < 0.02, "relative rmse {rel}");

        // training points land within three training RMSEs of their labels
        let train_rmse = model.train_mse.sqrt();
        let s = &train[0];
        assert!((model.predict(&s.genome, &cfg).unwrap() - s.latency_ms).abs() <= 3.0 * train_rmse + 1e-9);
    }

    #[test]
    fn constant_latency_is_predicted_exactly() {
        let cfg = small_space();
        let flat =
            DeviceProfile { device: "c".into(), ms_per_gmac: 0.0, ms_per_layer: 0.0, fixed_ms: 4.0, noise_ms: 0.0 };
        let s = generate_samples(&cfg, &flat, 60, &mut seeded(6)).unwrap();
        let model = train_lpm(&s, &cfg, &LpmConfig { epochs: 20, ..Default::default() }).unwrap();
        let p = model.predict(&ArchGenome::max(&cfg), &cfg).unwrap();
        assert!((p - 4.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn shuffled_labels_carry_no_signal() {
        let cfg = small_space();
        let profile = DeviceProfile::cpu_like();
        let mut train = generate_samples(&cfg, &profile, 300, &mut seeded(7)).unwrap();
        let mut labels: Vec<f64> = train.iter().map(|s| s.latency_ms).collect();
        labels.shuffle(&mut seeded(8));
        train.iter_mut().zip(labels).for_each(|(s, l)| s.latency_ms = l);
        let test = generate_samples(&cfg, &profile, 200, &mut seeded(9)).unwrap();
        let model = train_lpm(&train, &cfg, &LpmConfig { epochs: 30, ..Default::default() }).unwrap();
        let pred: Vec<f64> = test.iter().map(|s| model.predict(&s.genome, &cfg).unwrap()).collect();
        let truth: Vec<f64> = test.iter().map(|s| s.latency_ms).collect();
        assert!(spearman(&pred, &truth).abs() < 0.3);
    }

    #[test]
    fn full_batch_descent_is_monotone() {
        let cfg = small_space();
        let s = generate_samples(&cfg, &linear(), 120, &mut seeded(10)).unwrap();
        let hyper = LpmConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e-3,
            batch_size: usize::MAX,
            epochs: 100,
            ..Default::default()
        };
        let fit = fit_lpm(&s, &cfg, &hyper).unwrap();
        assert!(fit.history.windows(2).all(|w| w[1] <= w[0] + 1e-6));
        assert!(fit.history.last() < fit.history.first());
    }

    #[test]
    fn model_file_round_trip_and_space_check() {
        let cfg = small_space();
        let s = generate_samples(&cfg, &DeviceProfile::cpu_like(), 60, &mut seeded(11)).unwrap();
        let model = train_lpm(&s, &cfg, &LpmConfig { epochs: 3, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        let back = LatencyModel::read(&buf[..]).unwrap();
        assert_eq!(back, model);
        let g = ArchGenome::max(&cfg);
        assert_eq!(back.predict(&g, &cfg).unwrap().to_bits(), model.predict(&g, &cfg).unwrap().to_bits());
        let other = SearchSpaceConfig::default();
        assert!(matches!(model.predict(&ArchGenome::max(&other), &other), Err(Error::ModelMismatch(_))));
    }
}
