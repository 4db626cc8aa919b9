//! Experiment drivers: method × view-count NMSE matrices, image dumps and the
//! source → target adaptation study.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{focuss_reconstruct, tv_reconstruct, FocussConfig, TvConfig};
use crate::error::{ensure, Error, Result};
use crate::fbp::fbp_magnitude;
use crate::image::Image;
use crate::io::pgm::{auto_window, export_pgm};
use crate::kspace::measured_sinogram;
use crate::metrics::{nmse, psnr};
use crate::network::{predict, ArchConfig, NetworkParams};
use crate::phantom::PhantomFamily;
use crate::train::{
    build_training_set, finetune, intensity_scale, normalize_pairs, pretrain, select_slices, AcquisitionGeometry,
    AdaptConfig, PairedSample, TrainConfig,
};

/// `|reference - estimate|` pixelwise.
pub fn residual_map(reference: &Image, estimate: &Image) -> Result<Image> {
    reference.same_dims(estimate)?;
    let data = reference
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Image::from_vec(reference.height(), reference.width(), data)?.with_pixel_spacing(reference.pixel_spacing())
}

/// A reconstruction method of the comparison matrix.
#[derive(Clone, Debug)]
pub enum Reconstructor<'a> {
    Fbp,
    Tv(TvConfig),
    Focuss(FocussConfig),
    /// Network applied to the sparse-view FBP; timing covers the network only.
    Net(&'a NetworkParams),
}

/// One cell of the matrix for one slice (`slice = None` for the mean row).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixRow {
    pub method: String,
    pub views: usize,
    pub slice: Option<usize>,
    pub nmse: f64,
    pub psnr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Matrix {
    /// Per-slice rows followed by one mean row per (method, views).
    pub rows: Vec<MatrixRow>,
}

impl Matrix {
    pub fn mean(&self, method: &str, views: usize) -> Option<&MatrixRow> {
        self.rows
            .iter()
            .find(|r| r.slice.is_none() && r.method == method && r.views == views)
    }

    /// CSV `method,views,slice,nmse,psnr[,wall_time_s]`; the timing column is
    /// left out in deterministic mode so the file is reproducible.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut s = String::from("method,views,slice,nmse,psnr");
        s.push_str(if with_time { ",wall_time_s\n" } else { "\n" });
        for r in &self.rows {
            let slice = r.slice.map_or("mean".to_string(), |i| i.to_string());
            let _ = write!(s, "{},{},{},{:e},{:e}", r.method, r.views, slice, r.nmse, r.psnr);
            if with_time {
                let _ = write!(s, ",{:e}", r.wall_time);
            }
            s.push('\n');
        }
        s
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Evaluate every method at every view count on every slice. Labels are the
/// full-view reconstructions. With `dump` set, reconstructions and residual
/// maps go there as 16-bit PGMs together with `manifest.json`.
pub fn run_matrix(
    methods: &[(String, Reconstructor)],
    view_set: &[usize],
    phantoms: &[Image],
    geometry: &AcquisitionGeometry,
    dump: Option<&Path>,
) -> Result<Matrix> {
    ensure!(!methods.is_empty(), InvalidArgument, "no methods to evaluate");
    ensure!(!view_set.is_empty(), InvalidArgument, "no view counts to evaluate");
    ensure!(!phantoms.is_empty(), InvalidArgument, "no evaluation slices");
    for (i, (name, _)) in methods.iter().enumerate() {
        ensure!(
            !name.is_empty() && !name.contains([',', '/', '\n']) && methods[..i].iter().all(|(n, _)| n != name),
            InvalidArgument,
            "method names must be unique and CSV-safe, got {name:?}"
        );
    }
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for (slice, phantom) in phantoms.iter().enumerate() {
        let size = phantom.height();
        for &views in view_set {
            let (full, sparse) = geometry.measure(phantom, slice, views)?;
            let label = fbp_magnitude(&full, size, geometry.window)?;
            let window = auto_window(&label);
            let fbp_start = Instant::now();
            let input = fbp_magnitude(&sparse, size, geometry.window)?;
            let fbp_time = fbp_start.elapsed().as_secs_f64();
            for (name, method) in methods {
                let t = Instant::now();
                let estimate = match method {
                    Reconstructor::Fbp => input.clone(),
                    Reconstructor::Tv(cfg) => tv_reconstruct(&measured_sinogram(&sparse)?, size, cfg)?.0,
                    Reconstructor::Focuss(cfg) => focuss_reconstruct(&measured_sinogram(&sparse)?, size, cfg)?.0,
                    Reconstructor::Net(p) => predict(p, &input)?,
                };
                let mut wall_time = t.elapsed().as_secs_f64();
                if matches!(method, Reconstructor::Fbp) {
                    wall_time += fbp_time;
                }
                rows.push(MatrixRow {
                    method: name.clone(),
                    views,
                    slice: Some(slice),
                    nmse: nmse(&label, &estimate)?,
                    psnr: psnr(&label, &estimate, label.max())?,
                    wall_time,
                });
                if let Some(dir) = dump {
                    let stem = format!("{name}_v{views}_s{slice}");
                    let resid = residual_map(&label, &estimate)?;
                    let rwin = (0.0, (window.1 - window.0) * 0.25);
                    export_pgm(&estimate, &dir.join(format!("{stem}.pgm")), window)?;
                    export_pgm(&resid, &dir.join(format!("{stem}_residual.pgm")), rwin)?;
                    files.push(json!({
                        "method": name, "views": views, "slice": slice,
                        "image": format!("{stem}.pgm"), "window": [window.0, window.1],
                        "residual": format!("{stem}_residual.pgm"), "residual_window": [rwin.0, rwin.1],
                    }));
                }
            }
            if let Some(dir) = dump {
                if methods.iter().all(|(n, _)| n != "label") {
                    let stem = format!("label_v{views}_s{slice}");
                    export_pgm(&label, &dir.join(format!("{stem}.pgm")), window)?;
                    files.push(json!({"method": "label", "views": views, "slice": slice,
                        "image": format!("{stem}.pgm"), "window": [window.0, window.1]}));
                }
            }
        }
    }
    for (name, _) in methods {
        for &views in view_set {
            let cell: Vec<&MatrixRow> = rows.iter().filter(|r| &r.method == name && r.views == views).collect();
            let m = MatrixRow {
                method: name.clone(),
                views,
                slice: None,
                nmse: mean(cell.iter().map(|r| r.nmse)),
                psnr: mean(cell.iter().map(|r| r.psnr)),
                wall_time: mean(cell.iter().map(|r| r.wall_time)),
            };
            rows.push(m);
        }
    }
    if let Some(dir) = dump {
        let manifest = json!({
            "format": "16-bit binary PGM (P5), linear window, clamped",
            "reference": "full-view reconstruction",
            "files": files,
        });
        write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(Matrix { rows })
}

/// Settings of the source → target adaptation study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptStudyConfig {
    pub source: PhantomFamily,
    pub target: PhantomFamily,
    pub size: usize,
    pub source_slices: usize,
    /// Fine-tuning slice counts; the largest sets the target training pool.
    pub s_values: Vec<usize>,
    /// Slice counts for networks trained on the target alone.
    pub scratch_s_values: Vec<usize>,
    pub val_slices: usize,
    pub seeds: Vec<u64>,
    pub geometry: AcquisitionGeometry,
    pub arch: ArchConfig,
    pub pretrain: TrainConfig,
    /// Fine-tuning schedule; scratch networks use the pre-training learning
    /// rates for this many epochs.
    pub finetune: TrainConfig,
}

/// Desk-scale architecture: 8 base channels, two blocks per stage.
pub fn desk_arch() -> ArchConfig {
    ArchConfig {
        base_channels: 8,
        blocks_per_stage: 2,
        final_stage_blocks: 2,
        ..ArchConfig::default()
    }
}

impl Default for AdaptStudyConfig {
    fn default() -> Self {
        let pretrain = TrainConfig::default();
        Self {
            source: PhantomFamily::Abdomen,
            target: PhantomFamily::Brain,
            size: 64,
            source_slices: 6,
            s_values: vec![1, 3, 6],
            scratch_s_values: vec![1, 3],
            val_slices: 4,
            seeds: vec![1, 2, 3],
            geometry: AcquisitionGeometry::default(),
            arch: desk_arch(),
            finetune: AdaptConfig::default().train,
            pretrain,
        }
    }
}

impl AdaptStudyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.s_values.is_empty(), InvalidArgument, "empty s grid");
        ensure!(
            self.s_values.iter().all(|&s| s >= 1),
            InvalidArgument,
            "s values must be >= 1"
        );
        ensure!(!self.seeds.is_empty(), InvalidArgument, "no seeds");
        ensure!(
            self.source_slices >= 1 && self.val_slices >= 1,
            InvalidArgument,
            "need source and validation slices"
        );
        ensure!(
            self.scratch_s_values.iter().all(|s| *s >= 1 && *s <= self.max_s()),
            InvalidArgument,
            "scratch s values must lie within the target pool of {} slices",
            self.max_s()
        );
        self.arch.validate()?;
        self.pretrain.validate(&self.arch)?;
        self.finetune.validate(&self.arch)
    }

    fn max_s(&self) -> usize {
        self.s_values.iter().copied().max().unwrap_or(0)
    }
}

/// One validation result: `slice = None` averages the slices of a seed,
/// `seed = None` additionally averages over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptRow {
    pub model: String,
    pub s: usize,
    pub seed: Option<u64>,
    pub slice: Option<usize>,
    pub nmse: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptStudy {
    pub source: PhantomFamily,
    pub target: PhantomFamily,
    pub rows: Vec<AdaptRow>,
}

impl AdaptStudy {
    /// Seed-averaged NMSE of `model` at `s` (`s = 0` for models without one).
    pub fn mean_nmse(&self, model: &str, s: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.seed.is_none() && r.model == model && r.s == s)
            .map(|r| r.nmse)
    }

    /// CSV `source,target,model,s,seed,slice,nmse,psnr`; `mean` marks
    /// averaged rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,target,model,s,seed,slice,nmse,psnr\n");
        for r in &self.rows {
            let seed = r.seed.map_or("mean".into(), |v| v.to_string());
            let slice = r.slice.map_or("mean".into(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{seed},{slice},{:e},{:e}",
                self.source.name(),
                self.target.name(),
                r.model,
                r.s,
                r.nmse,
                r.psnr
            );
        }
        out
    }
}

fn evaluate(
    model: &str,
    s: usize,
    seed: u64,
    params: Option<&NetworkParams>,
    val: &[PairedSample],
) -> Result<Vec<AdaptRow>> {
    let mut rows = Vec::with_capacity(val.len() + 1);
    for (i, p) in val.iter().enumerate() {
        let est = match params {
            Some(net) => predict(net, &p.input)?,
            None => p.input.clone(),
        };
        rows.push(AdaptRow {
            model: model.into(),
            s,
            seed: Some(seed),
            slice: Some(i),
            nmse: nmse(&p.label, &est)?,
            psnr: psnr(&p.label, &est, p.label.max())?,
        });
    }
    rows.push(AdaptRow {
        model: model.into(),
        s,
        seed: Some(seed),
        slice: None,
        nmse: mean(rows.iter().map(|r| r.nmse)),
        psnr: mean(rows.iter().map(|r| r.psnr)),
    });
    Ok(rows)
}

/// Train `cfg` on `pairs` from a fresh network in the corpus' own units.
fn train_fresh(pairs: &[PairedSample], arch: &ArchConfig, cfg: &TrainConfig) -> Result<NetworkParams> {
    let scale = intensity_scale(pairs, cfg.label_peak)?;
    let (mut net, _) = pretrain(&normalize_pairs(pairs, scale), &[], arch, cfg)?;
    net.intensity_scale = scale;
    Ok(net)
}

/// For each seed: pre-train on the source family, fine-tune on `s` target
/// slices for every `s`, train scratch networks on the target alone, and
/// score everything (plus the FBP input) on held-out target slices.
///
/// Models: `fbp`, `unadapted`, `adapted` (per `s`), `scratch` (per `s`).
pub fn run_adaptation_study(cfg: &AdaptStudyConfig) -> Result<AdaptStudy> {
    cfg.validate()?;
    let pool = cfg.max_s();
    let views = &cfg.pretrain.view_set;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let source = cfg.source.images(seed, 0, cfg.source_slices, cfg.size)?;
        let target = cfg.target.images(seed, 0, pool, cfg.size)?;
        // Held-out slices come from a disjoint index range of the target family.
        let held_out = cfg.target.images(seed, 10_000, cfg.val_slices, cfg.size)?;
        let source_pairs = build_training_set(&source, views, &cfg.geometry)?;
        let target_pairs = build_training_set(&target, views, &cfg.geometry)?;
        let val = build_training_set(&held_out, views, &cfg.geometry)?;

        let pre_cfg = TrainConfig {
            seed,
            ..cfg.pretrain.clone()
        };
        let pre = train_fresh(&source_pairs, &cfg.arch, &pre_cfg)?;
        rows.extend(evaluate("fbp", 0, seed, None, &val)?);
        rows.extend(evaluate("unadapted", 0, seed, Some(&pre), &val)?);

        let target_norm = normalize_pairs(&target_pairs, pre.intensity_scale);
        for &s in &cfg.s_values {
            let adapt = AdaptConfig {
                train: TrainConfig {
                    seed,
                    ..cfg.finetune.clone()
                },
                num_target_slices: s,
            };
            let (net, _) = finetune(&pre, &target_norm, &[], &adapt)?;
            rows.extend(evaluate("adapted", s, seed, Some(&net), &val)?);
        }
        for &s in &cfg.scratch_s_values {
            let scratch_cfg = TrainConfig {
                seed,
                epochs: cfg.finetune.epochs,
                ..cfg.pretrain.clone()
            };
            let net = train_fresh(&select_slices(&target_pairs, s)?, &cfg.arch, &scratch_cfg)?;
            rows.extend(evaluate("scratch", s, seed, Some(&net), &val)?);
        }
    }
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in &rows {
        if !keys.iter().any(|(m, s)| m == &r.model && *s == r.s) {
            keys.push((r.model.clone(), r.s));
        }
    }
    for (model, s) in keys {
        let per_seed: Vec<&AdaptRow> = rows
            .iter()
            .filter(|r| r.model == model && r.s == s && r.slice.is_none())
            .collect();
        let row = AdaptRow {
            model: model.clone(),
            s,
            seed: None,
            slice: None,
            nmse: mean(per_seed.iter().map(|r| r.nmse)),
            psnr: mean(per_seed.iter().map(|r| r.psnr)),
        };
        rows.push(row);
    }
    Ok(AdaptStudy {
        source: cfg.source,
        target: cfg.target,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, EllipsePhantomSpec};

    #[test]
    fn residual_map_properties() {
        let a = Image::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let b = Image::from_vec(2, 2, vec![0.0, 1.0, 3.5, 0.5]).unwrap();
        assert_eq!(residual_map(&a, &a).unwrap().max(), 0.0);
        assert_eq!(residual_map(&a, &b).unwrap(), residual_map(&b, &a).unwrap());
        let linf = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert_eq!(residual_map(&a, &b).unwrap().max(), linf);
        assert!(residual_map(&a, &Image::zeros(2, 3)).is_err());
    }

    #[test]
    fn single_cell_matrix_equals_direct_nmse() {
        let phantom = make_phantom(&EllipsePhantomSpec::shepp_logan(), 32).unwrap();
        let geom = AcquisitionGeometry {
            full_views: 60,
            ..AcquisitionGeometry::default()
        };
        let m = run_matrix(
            &[("fbp".into(), Reconstructor::Fbp)],
            &[20],
            std::slice::from_ref(&phantom),
            &geom,
            None,
        )
        .unwrap();
        let (full, sparse) = geom.measure(&phantom, 0, 20).unwrap();
        let label = fbp_magnitude(&full, 32, geom.window).unwrap();
        let direct = nmse(&label, &fbp_magnitude(&sparse, 32, geom.window).unwrap()).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[0].nmse, direct);
        assert_eq!(m.mean("fbp", 20).unwrap().nmse, direct);
    }

    #[test]
    fn fbp_row_decreases_with_views_and_means_are_consistent() {
        let phantoms = PhantomFamily::Brain.images(4, 0, 2, 32).unwrap();
        let geom = AcquisitionGeometry {
            full_views: 90,
            ..AcquisitionGeometry::default()
        };
        let views = [15, 30, 45];
        let m = run_matrix(&[("fbp".into(), Reconstructor::Fbp)], &views, &phantoms, &geom, None).unwrap();
        let means: Vec<f64> = views.iter().map(|&v| m.mean("fbp", v).unwrap().nmse).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
        for &v in &views {
            let per: Vec<f64> = m
                .rows
                .iter()
                .filter(|r| r.views == v && r.slice.is_some())
                .map(|r| r.nmse)
                .collect();
            assert_eq!(per.len(), 2);
            assert_eq!(m.mean("fbp", v).unwrap().nmse, (per[0] + per[1]) / 2.0);
        }
        let csv = m.to_csv(false);
        assert!(csv.starts_with("method,views,slice,nmse,psnr\n"));
        assert_eq!(csv.lines().count(), 1 + 3 * 2 + 3);
        assert!(m.to_csv(true).lines().next().unwrap().ends_with(",wall_time_s"));
    }

    #[test]
    fn matrix_dumps_images_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let phantoms = PhantomFamily::Abdomen.images(1, 0, 1, 32).unwrap();
        let geom = AcquisitionGeometry {
            full_views: 40,
            ..AcquisitionGeometry::default()
        };
        run_matrix(
            &[("fbp".into(), Reconstructor::Fbp)],
            &[10],
            &phantoms,
            &geom,
            Some(dir.path()),
        )
        .unwrap();
        for f in [
            "fbp_v10_s0.pgm",
            "fbp_v10_s0_residual.pgm",
            "label_v10_s0.pgm",
            "manifest.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn rejects_duplicate_method_names() {
        let phantoms = PhantomFamily::Abdomen.images(1, 0, 1, 32).unwrap();
        let m = [
            ("a".to_string(), Reconstructor::Fbp),
            ("a".to_string(), Reconstructor::Fbp),
        ];
        assert!(run_matrix(&m, &[10], &phantoms, &AcquisitionGeometry::default(), None).is_err());
    }

    #[test]
    fn tiny_adaptation_study_reports_every_model() {
        let cfg = AdaptStudyConfig {
            size: 16,
            source_slices: 1,
            s_values: vec![1, 2],
            scratch_s_values: vec![2],
            val_slices: 1,
            seeds: vec![5],
            geometry: AcquisitionGeometry {
                full_views: 24,
                ..AcquisitionGeometry::default()
            },
            arch: ArchConfig {
                depth: 1,
                base_channels: 2,
                blocks_per_stage: 1,
                final_stage_blocks: 1,
                ..ArchConfig::default()
            },
            pretrain: TrainConfig {
                epochs: 2,
                patch: 16,
                view_set: vec![8, 12],
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                epochs: 2,
                patch: 16,
                view_set: vec![8, 12],
                ..AdaptConfig::default().train
            },
            ..AdaptStudyConfig::default()
        };
        let study = run_adaptation_study(&cfg).unwrap();
        for (m, s) in [
            ("fbp", 0),
            ("unadapted", 0),
            ("adapted", 1),
            ("adapted", 2),
            ("scratch", 2),
        ] {
            let v = study.mean_nmse(m, s).unwrap();
            assert!(v.is_finite(), "{m} {s}");
        }
        let csv = study.to_csv();
        assert!(csv.starts_with("source,target,model,s,seed,slice,nmse,psnr\n"));
        assert!(csv.contains("abdomen,brain,adapted,2,5,mean,"));
        assert!(csv.contains("abdomen,brain,scratch,2,mean,mean,"));
        let too_many = AdaptStudyConfig {
            scratch_s_values: vec![3],
            ..cfg
        };
        assert!(run_adaptation_study(&too_many).is_err());
    }
}
