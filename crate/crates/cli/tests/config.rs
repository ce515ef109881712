use mpgen::config::{parse_mix, RunConfig};
use mpgen::CliError;
use mpgen_core::repr::SourceTag;
use mpgen_core::schedule::ScheduleKind;

#[test]
fn text_roundtrip() {
    let mut cfg = RunConfig::default();
    cfg.apply_text(
        "# run settings\n\
         model.latent_dim = 32\n\
         schedule = linear\n\
         sample_steps = 20\n\
         pose_scale = 0.25\n\
         mix = LP=0.7, HML=0.3\n\
         llm.endpoint = http://127.0.0.1:9/count\n\
         path.stage1 = /tmp/s1.safetensors\n",
    )
    .unwrap();
    assert_eq!(cfg.model.latent_dim, 32);
    assert_eq!(cfg.schedule, ScheduleKind::Linear);
    assert_eq!(cfg.sample_steps, Some(20));
    assert_eq!(cfg.guidance.pose_scale, 0.25);
    assert_eq!(cfg.mix.ratios, vec![(SourceTag::Lp, 0.7), (SourceTag::Hml, 0.3)]);
    assert!(cfg.llm_config().is_some());
    let mut again = RunConfig::default();
    again.apply_text(&cfg.to_text()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn unknown_key_names_line_and_key() {
    let mut cfg = RunConfig::default();
    match cfg.apply_text("seed = 3\n\nlearning_rate = 0.1\n") {
        Err(CliError::Parse(e)) => {
            assert_eq!(e.line, 3);
            assert_eq!(e.field, "learning_rate");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn bad_values_are_rejected() {
    for line in ["seed = -1", "schedule = quadratic", "fix_center = maybe", "cfg_scale = big", "no equals sign"] {
        assert!(RunConfig::default().apply_text(line).is_err(), "{line} accepted");
    }
}

#[test]
fn later_settings_win() {
    let mut cfg = RunConfig::default();
    cfg.set("seed", "1").unwrap();
    cfg.apply_text("seed = 2").unwrap();
    assert_eq!(cfg.seed, 2);
}

#[test]
fn guidance_is_validated_as_usage() {
    let mut cfg = RunConfig::default();
    cfg.set("pose_scale", "0.7").unwrap();
    cfg.set("motion_scale", "0.5").unwrap();
    let e = cfg.validate().unwrap_err();
    assert_eq!(e.exit_code(), 2);
    cfg.set("motion_scale", "0.3").unwrap();
    cfg.validate().unwrap();
}

#[test]
fn mix_must_sum_to_one() {
    assert!(parse_mix("LP=0.5,WVM=0.4").is_err());
    assert!(parse_mix("LP=0.5,LP=0.5").is_err());
    assert!(parse_mix("XX=1").is_err());
    assert_eq!(parse_mix("IH=1").unwrap().ratios, vec![(SourceTag::Ih, 1.0)]);
}

#[test]
fn schedule_respacing() {
    let mut cfg = RunConfig::default();
    assert_eq!(cfg.sampling_schedule().unwrap().len(), 100);
    cfg.set("sample_steps", "25").unwrap();
    assert_eq!(cfg.sampling_schedule().unwrap().len(), 25);
    cfg.set("sample_steps", "200").unwrap();
    assert!(cfg.validate().is_err());
}
