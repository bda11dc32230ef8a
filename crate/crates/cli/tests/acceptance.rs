//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p voxkit-cli --test acceptance`.

// `!(x <= tol)` is deliberate: a NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use voxkit_core::dataset::{verify_meta, CropMetaFile, MetaFile};
use voxkit_core::infer::{sliding_window_infer, SlidingWindowConfig, ThresholdPredictor};
use voxkit_core::io::{read_volume, write_mha_bytes, write_volume, WriteOptions};
use voxkit_core::metrics::{confusion, metrics_from_counts};
use voxkit_core::preprocess::patch_positions;
use voxkit_core::{orientation_of, reorient, ElementType, Geometry, OrientationCode, Volume, VoxelBuffer};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure!(t <= limit, "took {:.2?}, limit {:.0?}", t, limit);
    Ok(t)
}

fn voxkit(bin: &str, args: &[&str]) -> Result<String, String> {
    let path = match bin {
        "voxkit" => env!("CARGO_BIN_EXE_voxkit"),
        "itk_check" => env!("CARGO_BIN_EXE_itk_check"),
        "itk_resample" => env!("CARGO_BIN_EXE_itk_resample"),
        "itk_patch" => env!("CARGO_BIN_EXE_itk_patch"),
        other => return Err(format!("unknown binary {other}")),
    };
    let out = Command::new(path)
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .map_err(|e| format!("{bin}: {e}"))?;
    ensure!(
        out.status.success(),
        "{bin} {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn random_buffer(rng: &mut ChaCha8Rng, et: ElementType, n: usize) -> VoxelBuffer {
    match et {
        ElementType::Int8 => VoxelBuffer::Int8((0..n).map(|_| rng.random()).collect()),
        ElementType::Uint8 => VoxelBuffer::Uint8((0..n).map(|_| rng.random()).collect()),
        ElementType::Int16 => VoxelBuffer::Int16((0..n).map(|_| rng.random()).collect()),
        ElementType::Uint16 => VoxelBuffer::Uint16((0..n).map(|_| rng.random()).collect()),
        ElementType::Int32 => VoxelBuffer::Int32((0..n).map(|_| rng.random()).collect()),
        ElementType::Uint32 => VoxelBuffer::Uint32((0..n).map(|_| rng.random()).collect()),
        // Arbitrary bit patterns, NaN payloads included.
        ElementType::Float32 => VoxelBuffer::Float32((0..n).map(|_| f32::from_bits(rng.random())).collect()),
        ElementType::Float64 => VoxelBuffer::Float64((0..n).map(|_| f64::from_bits(rng.random())).collect()),
    }
}

fn geometry_drift(a: &Geometry, b: &Geometry) -> f64 {
    let mut d = (a.direction - b.direction).abs().max();
    for k in 0..3 {
        d = d.max((a.spacing[k] - b.spacing[k]).abs()).max((a.origin[k] - b.origin[k]).abs());
    }
    d
}

fn format_round_trip() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut files = 0;
    let mut worst_nifti = 0.0f64;
    for k in 0..200 {
        let et = ElementType::ALL[k % 8];
        let size = [rng.random_range(1..=32), rng.random_range(1..=32), rng.random_range(1..=32)];
        let spacing = [(); 3].map(|_| rng.random_range(0.1..5.0));
        let origin = [(); 3].map(|_| rng.random_range(-300.0..300.0));
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0));
        let rot = Rotation3::new(axis.normalize() * rng.random_range(-0.5..0.5));
        let code = OrientationCode::all()[rng.random_range(0..48)];
        let g = Geometry::new(size, spacing)
            .with_origin(origin)
            .with_direction(rot.matrix() * code.to_direction());
        let n = g.voxel_count();
        let v = Volume::new(g, random_buffer(&mut rng, et, n)).map_err(|e| e.to_string())?;
        // NIfTI keeps geometry in float32: origins up to 300 mm round by
        // up to ~2e-5 mm there.
        for (name, compress, tol) in [
            ("raw.mha", false, 1e-9),
            ("zip.mha", true, 1e-9),
            ("plain.nii", false, 1e-4),
            ("zip.nii.gz", false, 1e-4),
        ] {
            let path = dir.path().join(format!("{k}_{name}"));
            write_volume(&v, &path, WriteOptions { compress }).map_err(|e| format!("{name} {et}: {e}"))?;
            let back = read_volume(&path).map_err(|e| format!("{name} {et}: {e}"))?;
            ensure!(back.data().bit_eq(v.data()), "volume {k} ({et}) changed through {name}");
            let drift = geometry_drift(back.geometry(), v.geometry());
            ensure!(back.size() == v.size() && drift <= tol, "volume {k} ({et}) geometry drift {drift:e} through {name}");
            worst_nifti = if name.contains("nii") { worst_nifti.max(drift) } else { worst_nifti };
            files += 1;
        }
    }
    let t = within(Duration::from_secs(10), start)?;
    Ok(format!(
        "200 volumes, {files} files bit-identical in {t:.2?}, NIfTI geometry drift {worst_nifti:e}"
    ))
}

fn geometry_oracle() -> Check {
    let start = Instant::now();
    let codes = OrientationCode::all();
    ensure!(codes.len() == 48, "expected 48 codes, got {}", codes.len());
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for (k, source) in codes.iter().enumerate() {
        let g = Geometry::new([4, 4, 4], [0.7 + 0.1 * (k % 3) as f64, 1.3, 2.1])
            .with_origin([12.5, -40.25, 7.0 + k as f64])
            .with_direction(source.to_direction());
        let values: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let v = Volume::from_vec(g, values).map_err(|e| e.to_string())?;
        for target in &codes {
            let out = reorient(&v, *target).map_err(|e| e.to_string())?;
            let got = orientation_of(out.direction()).map_err(|e| e.to_string())?;
            ensure!(got == *target, "{source} -> {target} produced {got}");
            for (i, x) in out.data().to_f64_vec().into_iter().enumerate() {
                // Values are the source linear index, so they name the voxel.
                let src = v.geometry().unravel(x as usize).map(|c| c as f64);
                let dst = out.geometry().unravel(i).map(|c| c as f64);
                let a = v.index_to_physical(src);
                let b = out.index_to_physical(dst);
                for axis in 0..3 {
                    worst = worst.max((a[axis] - b[axis]).abs());
                }
                checks += 1;
            }
        }
    }
    ensure!(worst <= 1e-9, "max world displacement {worst:e} mm");
    let t = within(Duration::from_secs(5), start)?;
    Ok(format!("{checks} voxels over 48x48 code pairs, max drift {worst:e} mm in {t:.2?}"))
}

fn write_case(root: &Path, stem: &str, size: [usize; 3], spacing: [f64; 3], seed: u64) -> Result<(), String> {
    let g = Geometry::new(size, spacing).with_origin([-150.0, -120.0, 30.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.voxel_count();
    let centre = size.map(|l| l as f64 / 2.0);
    let mut img = Vec::with_capacity(n);
    let mut lbl = Vec::with_capacity(n);
    for i in 0..n {
        let idx = g.unravel(i);
        let r2: f64 = (0..3).map(|a| ((idx[a] as f64 - centre[a]) / centre[a]).powi(2)).sum();
        let organ = r2 < 0.3;
        img.push(if organ { 60 } else { -800 } + rng.random_range(-20i16..20));
        lbl.push(u8::from(organ) + u8::from(r2 < 0.05));
    }
    let opts = WriteOptions { compress: true };
    let img = Volume::from_vec(g, img).map_err(|e| e.to_string())?;
    let lbl = Volume::from_vec(g, lbl).map_err(|e| e.to_string())?;
    write_volume(&img, root.join(format!("image/{stem}.mha")), opts).map_err(|e| e.to_string())?;
    write_volume(&lbl, root.join(format!("label/{stem}.mha")), opts).map_err(|e| e.to_string())?;
    Ok(())
}

fn make_dataset(root: &Path, cases: &[(&str, [usize; 3], [f64; 3])]) -> Result<(), String> {
    std::fs::create_dir_all(root.join("image")).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(root.join("label")).map_err(|e| e.to_string())?;
    for (k, (stem, size, spacing)) in cases.iter().enumerate() {
        write_case(root, stem, *size, *spacing, k as u64)?;
    }
    Ok(())
}

fn verified(root: &Path) -> Result<MetaFile, String> {
    let mismatches = verify_meta(root, 1).map_err(|e| e.to_string())?;
    ensure!(mismatches.is_empty(), "{}: {mismatches:?}", root.display());
    MetaFile::read(root).map_err(|e| e.to_string())
}

fn dataset_pipeline() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = dir.path().join("source");
    make_dataset(
        &src,
        &[
            ("case_a", [120, 128, 128], [2.0, 2.0, 2.0]),
            ("case_b", [100, 150, 140], [2.5, 1.5, 1.5]),
            ("case_c", [96, 96, 96], [2.2, 2.0, 2.1]),
            ("case_d", [80, 200, 200], [2.0, 1.0, 1.0]),
        ],
    )?;
    voxkit("voxkit", &["meta", s(&src)])?;
    ensure!(verified(&src)?.samples.len() == 4, "meta should list 4 samples");

    let checked = dir.path().join("checked");
    voxkit("itk_check", &["symlink", s(&src), s(&checked), "--min-size", "96", "96", "96"])?;
    let kept = verified(&checked)?;
    ensure!(
        kept.samples.keys().cloned().collect::<Vec<_>>() == ["case_a", "case_b", "case_c"],
        "check kept {:?}",
        kept.samples.keys()
    );

    let resampled = dir.path().join("resampled");
    voxkit("itk_resample", &["dataset", s(&checked), s(&resampled), "--spacing", "2", "2", "2", "--mp"])?;
    let meta = verified(&resampled)?;
    ensure!(meta.samples.len() == 3, "resampled {} samples", meta.samples.len());
    ensure!(meta.samples.values().all(|r| r.spacing == [2.0; 3]), "spacing not (2, 2, 2)");

    let patched = dir.path().join("patched");
    voxkit(
        "itk_patch",
        &[s(&resampled), s(&patched), "--patch-size", "96", "96", "96", "--patch-stride", "48", "48", "48", "--mp"],
    )?;
    let patch_meta = verified(&patched)?;
    let crop = CropMetaFile::read(&patched).map_err(|e| e.to_string())?;

    let mut expected = BTreeMap::new();
    for (stem, rec) in &meta.samples {
        let axes: Vec<Vec<usize>> = (0..3)
            .map(|a| patch_positions(rec.size[a], 96, 48).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        for &z in &axes[0] {
            for &y in &axes[1] {
                for &x in &axes[2] {
                    expected.insert(format!("{stem}__z{z}_y{y}_x{x}"), (stem.clone(), [z, y, x], rec.size));
                }
            }
        }
    }
    ensure!(
        crop.patches.len() == expected.len(),
        "crop_meta lists {} patches, formula gives {}",
        crop.patches.len(),
        expected.len()
    );
    ensure!(patch_meta.samples.len() == expected.len(), "patch meta lists {}", patch_meta.samples.len());
    for (name, (stem, offset, source_size)) in &expected {
        let rec = crop.patches.get(name).ok_or_else(|| format!("missing patch {name}"))?;
        ensure!(
            rec.source_stem == *stem
                && rec.index_offset == *offset
                && rec.source_size == *source_size
                && rec.patch_size == [96; 3]
                && rec.stride == [48; 3],
            "crop record {name} disagrees: {rec:?}"
        );
        ensure!(patch_meta.samples[name].size == [96; 3], "patch {name} has wrong size");
    }
    let t = within(Duration::from_secs(60), start)?;
    Ok(format!("4 -> 3 samples, {} patches, every stage verifier-clean in {t:.2?}", expected.len()))
}

fn metrics_oracle() -> Check {
    // Worked example: pred [0 1 1 2], gt [0 1 2 2].
    let g = Geometry::new([1, 1, 4], [1.0; 3]);
    let pred = Volume::from_vec(g, vec![0u8, 1, 1, 2]).map_err(|e| e.to_string())?;
    let gt = Volume::from_vec(g, vec![0u8, 1, 2, 2]).map_err(|e| e.to_string())?;
    let m = metrics_from_counts(&confusion(&pred, &gt, 3).map_err(|e| e.to_string())?);
    ensure!(m.classes[1].dice == Some(2.0 / 3.0), "class 1 dice {:?}", m.classes[1].dice);
    ensure!(m.classes[1].iou == Some(0.5), "class 1 iou {:?}", m.classes[1].iou);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let classes = rng.random_range(1..=6u8);
        let g = Geometry::new([8, 8, 8], [1.0; 3]);
        let p: Vec<u8> = (0..512).map(|_| rng.random_range(0..classes)).collect();
        let t: Vec<u8> = (0..512).map(|_| rng.random_range(0..classes)).collect();
        let report = metrics_from_counts(
            &confusion(
                &Volume::from_vec(g, p.clone()).map_err(|e| e.to_string())?,
                &Volume::from_vec(g, t.clone()).map_err(|e| e.to_string())?,
                classes as usize,
            )
            .map_err(|e| e.to_string())?,
        );
        for c in 0..classes {
            let (mut tp, mut fp, mut fn_) = (0.0f64, 0.0f64, 0.0f64);
            for (&a, &b) in p.iter().zip(&t) {
                match (a == c, b == c) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
            let oracle = [
                ratio(2.0 * tp, 2.0 * tp + fp + fn_),
                ratio(tp, tp + fp + fn_),
                ratio(tp, tp + fn_),
                ratio(tp, tp + fp),
            ];
            let m = report.classes[c as usize];
            for (got, want) in [m.dice, m.iou, m.recall, m.precision].into_iter().zip(oracle) {
                match (got, want) {
                    (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                    (None, None) => {}
                    other => return Err(format!("class {c}: defined-ness differs {other:?}")),
                }
            }
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    Ok(format!("worked example exact, 100 random pairs max deviation {worst:e}"))
}

/// Two spheres in a body-like background.
fn phantom(size: [usize; 3]) -> Volume {
    let g = Geometry::new(size, [1.0, 0.8, 0.8]).with_origin([-40.0, -30.0, 12.0]);
    let blobs = [([0.3, 0.35, 0.4], 0.18, 80.0f32), ([0.65, 0.6, 0.55], 0.22, 40.0)];
    let data: Vec<f32> = (0..g.voxel_count())
        .map(|i| {
            let idx = g.unravel(i);
            let rel = [0, 1, 2].map(|a| idx[a] as f64 / size[a] as f64);
            let mut v = -300.0 + (i % 17) as f32;
            for (c, r, hu) in blobs {
                let d2: f64 = (0..3).map(|a| (rel[a] - c[a]).powi(2)).sum();
                if d2 < r * r {
                    v = hu + (i % 5) as f32;
                }
            }
            v
        })
        .collect();
    Volume::from_vec(g, data).unwrap()
}

fn sliding_window_equivalence() -> Check {
    let start = Instant::now();
    let v = phantom([100, 100, 100]);
    let (lo, hi) = (0.0f32, 100.0f32);
    let predictor = ThresholdPredictor::new(lo, hi).map_err(|e| e.to_string())?;
    let whole: Vec<f64> = v
        .data()
        .to_f32_vec()
        .iter()
        .map(|&x| f64::from(u8::from(x >= lo && x <= hi)))
        .collect();
    let mut worst = 0.0f64;
    for stride in [32, 48, 96] {
        let mut cfg = SlidingWindowConfig::new([96; 3], [stride; 3]);
        cfg.keep_probabilities = true;
        let r = sliding_window_infer(&v, &predictor, &cfg).map_err(|e| e.to_string())?;
        ensure!(r.labels.data().to_f64_vec() == whole, "stride {stride}: labels differ from whole-volume threshold");
        ensure!(r.labels.geometry_close(&v, 0.0), "stride {stride}: geometry changed");
        let probs = r.probabilities.ok_or("probabilities missing")?;
        let per_class: Vec<Vec<f64>> = probs.iter().map(|p| p.data().to_f64_vec()).collect();
        for i in 0..whole.len() {
            let sum: f64 = per_class.iter().map(|p| p[i]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    ensure!(worst <= 1e-4, "probability sums deviate by {worst:e}");
    let t = within(Duration::from_secs(30), start)?;
    Ok(format!("strides 32/48/96 exact, probability sum deviation {worst:e} in {t:.2?}"))
}

/// Relative path -> file bytes or symlink target, for the whole tree.
fn snapshot(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let meta = std::fs::symlink_metadata(&path)?;
            if meta.file_type().is_symlink() {
                out.insert(rel, std::fs::read_link(&path)?.to_string_lossy().into_owned().into_bytes());
            } else if meta.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.insert(rel, std::fs::read(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    if root.is_dir() {
        walk(root, root, &mut out).map_err(|e| format!("{}: {e}", root.display()))?;
    } else {
        out.insert(String::new(), std::fs::read(root).map_err(|e| format!("{}: {e}", root.display()))?);
    }
    Ok(out)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = dir.path().join("source");
    make_dataset(
        &src,
        &[
            ("p01", [20, 24, 22], [2.5, 0.9, 0.9]),
            ("p02", [18, 30, 26], [3.0, 0.8, 0.8]),
            ("p03", [24, 20, 20], [2.0, 1.1, 1.1]),
            ("p04", [12, 16, 16], [2.0, 1.0, 1.0]),
        ],
    )?;
    voxkit("voxkit", &["meta", s(&src)])?;
    let ct = dir.path().join("ct.mha");
    write_volume(&phantom([30, 34, 28]), &ct, WriteOptions { compress: true }).map_err(|e| e.to_string())?;
    let label = src.join("label");

    let verbs: Vec<(&str, Vec<String>)> = vec![
        ("meta", vec!["meta".into(), s(&src).into()]),
        ("check symlink", vec!["check".into(), "symlink".into(), s(&src).into(), "{out}".into(), "--min-size".into(), "16".into(), "16".into(), "16".into()]),
        ("resample --spacing", vec!["resample".into(), "dataset".into(), s(&src).into(), "{out}".into(), "--spacing".into(), "1.5".into(), "1.5".into(), "1.5".into()]),
        ("resample --size", vec!["resample".into(), "dataset".into(), s(&src).into(), "{out}".into(), "--size".into(), "10".into(), "12".into(), "14".into()]),
        ("patch", vec!["patch".into(), s(&src).into(), "{out}".into(), "--patch-size".into(), "8".into(), "12".into(), "12".into(), "--patch-stride".into(), "4".into(), "6".into(), "12".into()]),
        ("orient", vec!["orient".into(), s(&src).into(), "{out}".into(), "--code".into(), "RAI".into()]),
        ("remap", vec!["remap".into(), s(&src).into(), "{out}".into(), "--map".into(), "2:1,1:3".into()]),
        ("convert decathlon", vec!["convert".into(), s(&src).into(), "{out}".into(), "--layout".into(), "decathlon".into()]),
        ("convert channel-file-pairs", vec!["convert".into(), s(&src).into(), "{out}".into(), "--layout".into(), "channel-file-pairs".into()]),
        ("augment", vec![
            "augment".into(), s(&src).into(), "{out}".into(), "--seed".into(), "1234".into(),
            "--transform".into(), r#"{"name":"roll","max_shift":[3,3,3]}"#.into(),
            "--transform".into(), r#"{"name":"flip","p":0.5}"#.into(),
            "--transform".into(), r#"{"name":"erase_continuous","max_size":[4,4,4],"fill":null}"#.into(),
            "--transform".into(), r#"{"name":"erase_discrete","count":30,"fill":null}"#.into(),
            "--transform".into(), r#"{"name":"rotate3d","axis":1,"max_degrees":20.0}"#.into(),
        ]),
        ("eval", vec!["eval".into(), s(&label).into(), s(&label).into(), "--classes".into(), "3".into(), "--output".into(), "{out}".into()]),
        ("infer", vec![
            "infer".into(), s(&ct).into(), "{out}".into(), "--threshold".into(), "0".into(), "100".into(),
            "--patch-size".into(), "16".into(), "16".into(), "16".into(), "--stride".into(), "8".into(), "8".into(), "8".into(),
            "--save-probabilities".into(),
        ]),
    ];
    let mut compared = 0;
    for (name, args) in &verbs {
        let mut trees = Vec::new();
        let mut stdouts = Vec::new();
        for mp in ["1", "8"] {
            let out = match *name {
                "meta" => src.clone(),
                "eval" => dir.path().join(format!("eval_{mp}.json")),
                "infer" => dir.path().join(format!("infer_{mp}.mha")),
                _ => dir.path().join(format!("{}_{mp}", name.replace(' ', "_"))),
            };
            let argv: Vec<String> = args
                .iter()
                .map(|a| if a == "{out}" { s(&out).to_string() } else { a.clone() })
                .chain(["--mp".to_string(), mp.to_string()])
                .collect();
            let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
            stdouts.push(voxkit("voxkit", &argv)?.replace(s(&out), "<out>"));
            let mut tree = snapshot(&out)?;
            if *name == "infer" {
                for c in 0..2 {
                    let p = dir.path().join(format!("infer_{mp}_prob{c}.mha"));
                    tree.insert(format!("prob{c}"), std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?);
                }
            }
            trees.push(tree);
        }
        ensure!(!trees[0].is_empty(), "{name}: no output");
        ensure!(
            trees[0].keys().eq(trees[1].keys()),
            "{name}: file sets differ: {:?} vs {:?}",
            trees[0].keys().collect::<Vec<_>>(),
            trees[1].keys().collect::<Vec<_>>()
        );
        for (path, bytes) in &trees[0] {
            ensure!(trees[1][path] == *bytes, "{name}: {path} differs between --mp 1 and --mp 8");
            compared += 1;
        }
        ensure!(stdouts[0] == stdouts[1], "{name}: stdout differs between --mp 1 and --mp 8");
    }
    Ok(format!("{} verb invocations, {compared} files byte-identical across --mp 1/8", verbs.len()))
}

fn service_fidelity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let v = phantom([48, 56, 40]);
    let ct = dir.path().join("phantom.mha");
    write_volume(&v, &ct, WriteOptions { compress: false }).map_err(|e| e.to_string())?;
    let cli_mask = dir.path().join("mask.mha");
    voxkit(
        "voxkit",
        &[
            "infer", s(&ct), s(&cli_mask), "--threshold", "0", "100",
            "--patch-size", "32", "32", "32", "--stride", "16", "16", "16",
        ],
    )?;
    let offline = std::fs::read(&cli_mask).map_err(|e| e.to_string())?;

    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let config = voxkit_service::ServiceConfig {
            bind: "127.0.0.1:0".parse().unwrap(),
            ..Default::default()
        };
        rt.block_on(voxkit_service::serve_with_shutdown(
            config,
            move |addr| addr_tx.send(addr).unwrap(),
            async {
                let _ = stop_rx.await;
            },
        ))
    });
    let addr = addr_rx.recv_timeout(Duration::from_secs(10)).map_err(|e| format!("server did not bind: {e}"))?;
    let base = format!("http://{addr}");
    let result = (|| -> Check {
        let client = reqwest::blocking::Client::new();
        let err = |e: reqwest::Error| e.to_string();
        let upload: Value = client
            .post(format!("{base}/volumes?filename=phantom.mha"))
            .body(std::fs::read(&ct).map_err(|e| e.to_string())?)
            .send()
            .map_err(err)?
            .error_for_status()
            .map_err(err)?
            .json()
            .map_err(err)?;
        let id = upload["id"].as_str().ok_or("upload returned no id")?;
        let job: Value = client
            .post(format!("{base}/volumes/{id}/segment"))
            .json(&json!({"predictor": "threshold", "lo": 0.0, "hi": 100.0, "patch_size": [32, 32, 32], "stride": [16, 16, 16]}))
            .send()
            .map_err(err)?
            .error_for_status()
            .map_err(err)?
            .json()
            .map_err(err)?;
        let job_id = job["id"].as_str().ok_or("segment returned no job id")?;
        let deadline = Instant::now() + Duration::from_secs(60);
        let done = loop {
            let j: Value = client.get(format!("{base}/jobs/{job_id}")).send().map_err(err)?.json().map_err(err)?;
            match j["state"].as_str() {
                Some("done") => break j,
                Some("failed") => return Err(format!("job failed: {}", j["error"])),
                _ => {}
            }
            ensure!(Instant::now() < deadline, "job did not finish");
            std::thread::sleep(Duration::from_millis(20));
        };
        let mask_id = done["mask_id"].as_str().ok_or("done job has no mask id")?;
        let served = client
            .get(format!("{base}/masks/{mask_id}"))
            .send()
            .map_err(err)?
            .error_for_status()
            .map_err(err)?
            .bytes()
            .map_err(err)?;
        ensure!(served.as_ref() == offline.as_slice(), "served mask differs from `voxkit infer` output");
        let served_volume = voxkit_core::io::read_mha_bytes(&served).map_err(|e| e.to_string())?;
        ensure!(served_volume.geometry_close(&v, 1e-9), "mask geometry differs from the input");
        ensure!(write_mha_bytes(&served_volume, true).map_err(|e| e.to_string())? == offline, "re-encoding differs");
        Ok(format!("{} mask bytes identical to the CLI output", served.len()))
    })();
    let _ = stop_tx.send(());
    let _ = server.join();
    result
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("format round trip", format_round_trip),
        ("geometry oracle", geometry_oracle),
        ("dataset pipeline (meta, check, resample, patch)", dataset_pipeline),
        ("metrics oracle", metrics_oracle),
        ("sliding-window equivalence", sliding_window_equivalence),
        ("determinism across --mp 1/8", determinism),
        ("service fidelity", service_fidelity),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
