use reenact_core::charmesh::{BodyPart, PART_COUNT};
use reenact_core::conditioning::ConditioningMode;
use reenact_core::pipeline::RenderSettings;

#[test]
fn default_smoothing_is_one_frame() {
    assert_eq!(RenderSettings::default().smoothing_sigma, Some(1.0));
}

#[test]
fn six_named_body_parts() {
    assert_eq!(PART_COUNT, 6);
    let names: Vec<String> = BodyPart::ALL.iter().map(|p| format!("{p:?}")).collect();
    assert_eq!(names, ["Head", "Torso", "LeftArm", "RightArm", "LeftLeg", "RightLeg"]);
    // 18 part-color channels + 6 part-depth channels + 3 background channels.
    assert_eq!(ConditioningMode::RgbdParts.channels(), 3 * PART_COUNT + PART_COUNT + 3);
}
