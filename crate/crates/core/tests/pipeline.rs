mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::*;
use sceneforge::blending::{composite_over, poisson_blend_planes, poisson_blend_with, BlendRegion, GuidanceMode};
use sceneforge::coco::{self, ANNOTATIONS_FILE};
use sceneforge::io;
use sceneforge::matting::{solve_alpha, MattingParams};
use sceneforge::outline::{interior_anchor, ray_distances, PolarOutline};
use sceneforge::raster::{make_trimap, BinaryMask, TrimapLabel, DEFAULT_TRIMAP_ELEMENT};
use sceneforge::solver::CgOptions;
use sceneforge::synth::{render_job, sample_jobs, Assets, SynthParams};

fn sceneforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sceneforge"))
        .args(args)
        .env_remove("SCENEFORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn matte_cli_equals_library() {
    let dir = tempfile::tempdir().unwrap();
    let (img, mask) = object_fixture(&mut rng(3), 30, 24);
    let trimap = make_trimap(&mask, &DEFAULT_TRIMAP_ELEMENT, &DEFAULT_TRIMAP_ELEMENT).unwrap();
    let (a, t, out) = (dir.path().join("a.png"), dir.path().join("t.png"), dir.path().join("alpha.png"));
    io::save_rgb_png(&img, &a).unwrap();
    io::save_trimap(&trimap, &t).unwrap();
    let o = sceneforge(&["matte", "--image", s(&a), "--trimap", s(&t), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let expected = io::alpha_png_bytes(&solve_alpha(&img, &trimap, &MattingParams::default()).unwrap()).unwrap();
    assert_eq!(fs::read(&out).unwrap(), expected);
}

#[test]
fn trimap_and_outline_cli_equal_library() {
    let dir = tempfile::tempdir().unwrap();
    let mask = disc_mask(40, 40, 19.0, 21.0, 12.0);
    let m = dir.path().join("m.png");
    io::save_mask(&mask, &m).unwrap();

    let t = dir.path().join("t.png");
    let o = sceneforge(&["trimap", "--mask", s(&m), "--out", s(&t), "--trimap-shape", "disc", "--erode-radius", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let se = |r| sceneforge::raster::StructuringElement::disc(r);
    let expected = make_trimap(&mask, &se(2), &se(3)).unwrap();
    assert_eq!(fs::read(&t).unwrap(), io::trimap_png_bytes(&expected).unwrap());

    let j = dir.path().join("o.json");
    let o = sceneforge(&["outline", "--mask", s(&m), "--out", s(&j), "--jitter-samples", "4", "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&j).unwrap()).unwrap();
    let outline: PolarOutline = serde_json::from_value(doc["outline"].clone()).unwrap();
    assert_eq!(outline, ray_distances(&mask, interior_anchor(&mask).unwrap(), 16).unwrap());
    assert_eq!(doc["jittered"].as_array().unwrap().len(), 4);
}

#[test]
fn band_fixture_matches_dense_oracle() {
    let (img, t) = band_fixture();
    let params = MattingParams {
        cg: CgOptions { tol: 1e-12, max_iter: Some(100_000) },
        ..MattingParams::default()
    };
    let alpha = solve_alpha(&img, &t, &params).unwrap();
    let dense = dense_alpha(&img, &t, 1, 1e-7);
    for (a, d) in alpha.as_slice().iter().zip(&dense) {
        assert!((a - d).abs() < 1e-6, "{a} vs {d}");
    }
    let fg_side: Vec<f64> = (0..16).map(|y| alpha.get(7, y)).collect();
    let high = fg_side.iter().filter(|&&a| a > 0.9).count();
    assert!(high as f64 >= 0.99 * fg_side.len() as f64, "{fg_side:?}");
    for (p, l) in t.as_slice().iter().enumerate() {
        match l {
            TrimapLabel::Foreground => assert_eq!(alpha.as_slice()[p], 1.0),
            TrimapLabel::Background => assert_eq!(alpha.as_slice()[p], 0.0),
            TrimapLabel::Unknown => {}
        }
    }
}

#[test]
fn poisson_matches_dense_stencil_oracle() {
    let mut r = rng(8);
    for mode in [GuidanceMode::SourceGradients, GuidanceMode::MixedGradients] {
        for _ in 0..5 {
            let target = random_image(&mut r, 8, 8);
            let source = random_image(&mut r, 8, 8);
            let region = BlendRegion {
                mask: BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y)).unwrap(),
                offset: (0, 0),
            };
            let cg = CgOptions { tol: 1e-12, max_iter: None };
            let got = poisson_blend_planes(&target, &source, &region, mode, &cg).unwrap();
            let want = dense_poisson(&target, &source, &region, mode);
            for c in 0..3 {
                for (a, b) in got.planes[c].iter().zip(&want[c]) {
                    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn blend_cli_reproduces_synth_stage() {
    // Chain the stages by hand, running the blend through the CLI, and
    // compare with the batch renderer.
    let dir = tempfile::tempdir().unwrap();
    let pool = build_pool(dir.path(), 1, 1, (96, 80), 41);
    let params = SynthParams {
        objects_per_image: (1, 1),
        ..SynthParams::default()
    };
    let job = sample_jobs(&pool.manifest, 1, 5, &params).unwrap().remove(0);
    let assets = Assets::load(&pool, std::slice::from_ref(&job)).unwrap();
    let (rendered, _) = render_job(&job, &assets, &params).unwrap();

    let p = &job.placements[0];
    let obj = &assets.objects[&p.object_id];
    let scene = &assets.scenes[&job.scene_id];
    let image = obj.image.scale_bilinear(p.scale).unwrap();
    let alpha = obj.alpha.scale_bilinear(p.scale).unwrap();
    let offset = (p.position.x as i64, p.position.y as i64);
    let composite = composite_over(scene, &image, &alpha, offset).unwrap();
    let region = BinaryMask::from_fn(scene.width(), scene.height(), |x, y| {
        let (ox, oy) = (x as i64 - offset.0, y as i64 - offset.1);
        ox >= 0 && oy >= 0 && (ox as usize) < alpha.width() && (oy as usize) < alpha.height() && alpha.get(ox as usize, oy as usize) > 0.05
    })
    .unwrap();
    let files = ["scene.png", "composite.png", "region.png", "out.png"].map(|f| dir.path().join(f));
    io::save_rgb_png(scene, &files[0]).unwrap();
    io::save_rgb_png(&composite, &files[1]).unwrap();
    io::save_mask(&region, &files[2]).unwrap();
    let o = sceneforge(&[
        "blend", "--target", s(&files[0]), "--source", s(&files[1]), "--region", s(&files[2]), "--out", s(&files[3]),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(io::load_rgb(&files[3]).unwrap(), rendered);

    let lib = poisson_blend_with(scene, &composite, &BlendRegion { mask: region, offset: (0, 0) }, GuidanceMode::MixedGradients, &CgOptions::default()).unwrap();
    assert_eq!(lib, rendered);
}

#[test]
fn cli_end_to_end_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let mut r = rng(12);
    let mut object_args = Vec::new();
    for i in 0..2 {
        let (img, mask) = object_fixture(&mut r, 36, 30);
        let (ip, mp) = (src.join(format!("o{i}.png")), src.join(format!("o{i}_m.png")));
        io::save_rgb_png(&img, &ip).unwrap();
        io::save_mask(&mask, &mp).unwrap();
        object_args.extend(["--image".to_string(), s(&ip).to_string(), "--mask".into(), s(&mp).to_string()]);
        object_args.extend(["--category".to_string(), CATEGORIES[i].to_string()]);
    }
    let mut scene_paths = Vec::new();
    for i in 0..3 {
        let p = src.join(format!("s{i}.jpg"));
        io::write_atomic(&p, &io::jpeg_bytes(&scene_fixture(&mut r, 90, 70), 90).unwrap()).unwrap();
        scene_paths.push(s(&p).to_string());
    }
    let pool = dir.path().join("pool");
    let mut args = vec!["ingest-objects".to_string(), "--pool".into(), s(&pool).into()];
    args.extend(object_args);
    let o = sceneforge(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut args = vec!["ingest-scenes", "--pool", s(&pool), "--label", "kitchen"];
    args.extend(scene_paths.iter().map(String::as_str));
    let o = sceneforge(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let out = dir.path().join("out");
    let o = sceneforge(&["--log-json", "synth", "--pool", s(&pool), "--out", s(&out), "--n", "6", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let last = String::from_utf8_lossy(&o.stderr).lines().last().unwrap().to_string();
    let event: serde_json::Value = serde_json::from_str(&last).unwrap();
    assert_eq!(event["event"], "done");
    assert_eq!(event["images"], 6);

    let o = sceneforge(&["validate", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let dataset = coco::parse(&fs::read(out.join(ANNOTATIONS_FILE)).unwrap()).unwrap();
    assert_eq!(dataset.categories.len(), 2);
    let victim = &dataset.images[2].file_name;
    fs::remove_file(out.join("images").join(victim)).unwrap();
    let o = sceneforge(&["validate", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(victim.as_str()));
}

#[test]
fn usage_errors_exit_two() {
    let o = sceneforge(&["synth", "--pool", "p"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sceneforge(&["synth", "--pool", "p", "--out", "o", "--n", "1", "--objects-min", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--objects-min"));
    let o = sceneforge(&["nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sceneforge(&["matte", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[default: 0.0000001]"));
}
