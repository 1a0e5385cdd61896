use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcan_core::io::{read_pmap, write_pmap};
use dcan_core::net::ProbabilityMaps;

fn dcan(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&Path]) {
    let out = dcan(args);
    assert!(
        out.status.success(),
        "dcan {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(s: &str) -> PathBuf {
    PathBuf::from(s)
}

/// gen-data, make-labels, train, infer and fuse for every scene, then eval.
/// Returns the report CSV and the checkpoint bytes.
fn run_pipeline(root: &Path) -> (String, Vec<u8>) {
    let config = root.join("run.cfg");
    fs::write(&config, "synth.count = 3\ntrain.max_iters = 200\nrun.seed = 5\n").unwrap();
    let data = root.join("data");
    let seg = root.join("seg");
    fs::create_dir_all(&seg).unwrap();
    let cfg_args = [p("--config"), config.clone()];
    let with_cfg = |rest: &[PathBuf]| {
        let mut v: Vec<&Path> = cfg_args.iter().map(PathBuf::as_path).collect();
        v.extend(rest.iter().map(PathBuf::as_path));
        ok(&v);
    };
    with_cfg(&[p("gen-data"), data.clone()]);
    for i in 0..3 {
        let stem = format!("scene_{i:03}");
        with_cfg(&[
            p("make-labels"),
            data.join(format!("{stem}.imask")),
            data.join(format!("{stem}.contour.imask")),
        ]);
    }
    let ckpt = root.join("model.ckpt");
    with_cfg(&[p("train"), data.clone(), ckpt.clone()]);
    for i in 0..3 {
        let stem = format!("scene_{i:03}");
        let maps = root.join(format!("{stem}.pmap"));
        with_cfg(&[p("infer"), ckpt.clone(), data.join(format!("{stem}.ppm")), maps.clone()]);
        with_cfg(&[p("fuse"), maps, seg.join(format!("{stem}.imask"))]);
    }
    let report = root.join("report.csv");
    with_cfg(&[p("eval"), seg, data, report.clone()]);
    (fs::read_to_string(report).unwrap(), fs::read(ckpt).unwrap())
}

#[test]
fn end_to_end_pipeline_is_well_formed_and_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (report, ckpt) = run_pipeline(a.path());
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("image,f1,precision,recall,object_dice,object_hausdorff"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4, "three images plus the pooled row");
    assert!(rows[3].starts_with("ALL,"));
    let diagonal = (2.0f64 * 64.0 * 64.0).sqrt();
    for row in &rows {
        let v: Vec<f64> = row.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 5);
        assert!(v[..4].iter().all(|x| (0.0..=1.0).contains(x)), "{row}");
        assert!((0.0..=diagonal).contains(&v[4]), "{row}");
    }

    let (again, ckpt_again) = run_pipeline(b.path());
    assert_eq!(report, again);
    assert_eq!(ckpt, ckpt_again);
    for name in ["data/scene_001.ppm", "data/scene_001.contour.imask", "scene_002.pmap", "seg/scene_000.imask"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn objects_only_matches_zero_contour_plane() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (48, 40);
    let p_o: Vec<f64> = (0..w * h)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let d = ((y - 20.0).powi(2) + (x - 16.0).powi(2)).min((y - 18.0).powi(2) + (x - 31.0).powi(2));
            (1.0 - d / 150.0).clamp(0.0, 1.0)
        })
        .collect();
    let p_c: Vec<f64> = (0..w * h).map(|i| if (22..26).contains(&(i % w)) { 0.9 } else { 0.1 }).collect();
    let write = |name: &str, c: Vec<f64>| {
        let path = dir.path().join(name);
        let maps = ProbabilityMaps::new(h, w, p_o.clone(), c).unwrap();
        write_pmap(&mut fs::File::create(&path).unwrap(), &maps).unwrap();
        path
    };
    let real = write("real.pmap", p_c);
    let zero = write("zero.pmap", vec![0.0; w * h]);
    let (a, b) = (dir.path().join("a.imask"), dir.path().join("b.imask"));
    ok(&[&p("fuse"), &p("--objects-only"), &real, &a]);
    ok(&[&p("fuse"), &zero, &b]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let back = read_pmap(&mut fs::read(&real).unwrap().as_slice()).unwrap();
    assert_eq!(back.p_o, p_o);
}

#[test]
fn failures_give_one_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.imask");
    let out_path = dir.path().join("out.imask");
    let corrupt = dir.path().join("bad.pmap");
    fs::write(&corrupt, "PMAP v1 2 2\nshort").unwrap();
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "run.seed = 1\nfusion.t_o = 2\n").unwrap();
    let (make_labels, fuse, config, show) = (p("make-labels"), p("fuse"), p("--config"), p("show-config"));
    let cases: [(Vec<&Path>, &str); 3] = [
        (vec![&make_labels, &missing, &out_path], "cannot open"),
        (vec![&fuse, &corrupt, &out_path], "payload truncated"),
        (vec![&config, &bad_cfg, &show], "t_o"),
    ];
    for (args, needle) in cases {
        let out = dcan(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.contains(needle), "{err} lacks {needle:?}");
    }
}

#[test]
fn config_reference_page_is_current() {
    let doc = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.md");
    let on_disk = fs::read_to_string(&doc).unwrap_or_default();
    let generated = dcan_cli::reference_page();
    if on_disk != generated {
        panic!("docs/config.md is stale; regenerate with `dcan config-reference > docs/config.md`");
    }
}
