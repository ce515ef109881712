use mpgen::render::{render_frames, render_motion, subject_color, Canvas, RenderOptions, View};
use mpgen_core::corpus::{toy_group_motion, ToyAction};
use mpgen_core::curation::CurationConfig;
use mpgen_core::kinematics::{CapsuleBody, Skeleton};
use mpgen_core::repr::GroupMotion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn group(n: usize, frames: usize) -> GroupMotion {
    toy_group_motion(
        ToyAction::Wave,
        n,
        frames,
        &mut ChaCha8Rng::seed_from_u64(4),
        &Skeleton::default(),
        &CapsuleBody::default(),
        &CurationConfig::default(),
    )
    .unwrap()
}

fn count_color(c: &Canvas, color: [u8; 3]) -> usize {
    (0..c.height).flat_map(|y| (0..c.width).map(move |x| (x, y))).filter(|&(x, y)| c.get(x, y) == color).count()
}

#[test]
fn one_image_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let m = group(2, 7);
    let paths = render_motion(&m, dir.path(), &RenderOptions::default()).unwrap();
    assert_eq!(paths.len(), 7);
    for (f, p) in paths.iter().enumerate() {
        assert_eq!(p.file_name().unwrap().to_str().unwrap(), format!("frame_{f:04}.png"));
        let bytes = std::fs::read(p).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    }
}

#[test]
fn identical_input_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = group(3, 4);
    let opts = RenderOptions {
        view: View::Top,
        ..RenderOptions::default()
    };
    let pa = render_motion(&m, a.path(), &opts).unwrap();
    let pb = render_motion(&m, b.path(), &opts).unwrap();
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn subjects_get_their_own_colors() {
    let m = group(3, 1);
    let canvas = &render_frames(&m, &RenderOptions::default()).unwrap()[0];
    for n in 0..3 {
        assert!(count_color(canvas, subject_color(n)) > 50, "subject {n} missing");
    }
    assert_eq!(count_color(canvas, subject_color(3)), 0);
}

#[test]
fn masked_subjects_are_not_drawn() {
    let mut m = group(2, 1);
    m.subject_mask[1] = false;
    m.zero_invalid();
    let canvas = &render_frames(&m, &RenderOptions::default()).unwrap()[0];
    assert!(count_color(canvas, subject_color(0)) > 50);
    assert_eq!(count_color(canvas, subject_color(1)), 0);
}

#[test]
fn bounds_are_fixed_across_frames() {
    // a static motion renders the same picture at every frame
    let m = group(2, 1).repeat_frame(0, 3);
    let frames = render_frames(&m, &RenderOptions::default()).unwrap();
    assert_eq!(frames[0], frames[1]);
    assert_eq!(frames[1], frames[2]);
}

#[test]
fn empty_prompt_still_renders() {
    let dir = tempfile::tempdir().unwrap();
    let sample = mpgen_core::repr::MotionSample::new(group(1, 2), "", mpgen_core::SourceTag::HmlC);
    let input = dir.path().join("c.motion");
    mpgen::write_motion_file(&sample.into(), &input).unwrap();
    let out = dir.path().join("frames");
    let code = mpgen::cli::run(
        ["mpgen", "render", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--size", "64"],
        &mut Vec::new(),
        &mut Vec::new(),
    );
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2);
}

#[test]
fn bresenham_hits_both_endpoints() {
    let mut c = Canvas::new(20, 20);
    c.line((2, 3), (17, 11), 0, [0, 0, 0]);
    assert_eq!(c.get(2, 3), [0, 0, 0]);
    assert_eq!(c.get(17, 11), [0, 0, 0]);
    // one pixel per column along the major axis
    assert_eq!(count_color(&c, [0, 0, 0]), 16);
}
