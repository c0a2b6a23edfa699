use qlf::datagen::{
    derive_label, generate_dataset, oracle_fraction, render_scene, uniform_mix, ImageSettings, Jitter, LabelScheme,
    PixelClass, SceneParams,
};
use qlf::eval::f1_macro;
use qlf::Error;

fn params(fraction: f64, seed: u64) -> SceneParams {
    SceneParams {
        plaque_fraction: fraction,
        seed,
        ..SceneParams::default()
    }
}

#[test]
fn pixel_rule_oracle_classifies_rfpp3() {
    for noise in [0.0, 0.05] {
        let settings = ImageSettings {
            noise_sigma: noise,
            ..ImageSettings::default()
        };
        let data = generate_dataset(150, LabelScheme::Rfpp3, &uniform_mix(LabelScheme::Rfpp3), 3, &settings).unwrap();
        let predicted: Vec<usize> = data
            .images
            .iter()
            .map(|img| derive_label(oracle_fraction(img).unwrap(), LabelScheme::Rfpp3).unwrap())
            .collect();
        let f1 = f1_macro(&data.labels, &predicted).unwrap();
        assert!(f1 >= 0.9, "noise {noise}: oracle macro F1 {f1}");
    }
}

#[test]
fn mean_tooth_red_grows_with_plaque() {
    let mut means = Vec::new();
    for step in 0..=5 {
        let fraction = step as f64 * 0.2;
        let mut total = 0.0;
        for seed in 0..20 {
            let scene = render_scene(&params(fraction, seed)).unwrap();
            let red = scene.image.plane(0);
            let (sum, count) = scene
                .mask
                .iter()
                .zip(red)
                .filter(|(m, _)| matches!(m, PixelClass::Tooth | PixelClass::Plaque))
                .fold((0.0, 0usize), |(s, n), (_, &r)| (s + r, n + 1));
            total += sum / count as f64;
        }
        means.push(total / 20.0);
    }
    for pair in means.windows(2) {
        assert!(pair[1] >= pair[0], "{means:?}");
    }
}

#[test]
fn stored_labels_match_realized_fractions() {
    for scheme in [LabelScheme::Rfpp3, LabelScheme::Rfmqh5, LabelScheme::Mslp4] {
        let data = generate_dataset(60, scheme, &uniform_mix(scheme), 8, &ImageSettings::default()).unwrap();
        for (&f, &label) in data.fractions.iter().zip(&data.labels) {
            assert_eq!(derive_label(f, scheme).unwrap(), label);
        }
    }
}

#[test]
fn pose_jitter_barely_moves_the_fraction() {
    let pose_only = Jitter {
        blur_radius: 0.0,
        zoom: 0.0,
        ..Jitter::default()
    };
    for seed in 0..20 {
        for fraction in [0.1, 0.4, 0.8] {
            let still = render_scene(&SceneParams {
                jitter: Jitter::none(),
                ..params(fraction, seed)
            })
            .unwrap();
            let moved = render_scene(&SceneParams {
                jitter: pose_only,
                ..params(fraction, seed)
            })
            .unwrap();
            let d = (still.realized_fraction - moved.realized_fraction).abs();
            assert!(d < 0.02, "seed {seed} fraction {fraction}: moved by {d}");
        }
    }
}

#[test]
fn small_uniform_dataset_stays_near_balanced() {
    for seed in 0..10 {
        let data =
            generate_dataset(30, LabelScheme::Rfpp3, &uniform_mix(LabelScheme::Rfpp3), seed, &ImageSettings::default())
                .unwrap();
        for count in data.class_histogram() {
            assert!(count.abs_diff(10) <= 2, "seed {seed}: {:?}", data.class_histogram());
        }
    }
}

#[test]
fn too_few_images_or_bad_mix_is_rejected() {
    let settings = ImageSettings::default();
    let mix = uniform_mix(LabelScheme::Rfpp3);
    assert!(matches!(
        generate_dataset(5, LabelScheme::Rfpp3, &mix, 0, &settings),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        generate_dataset(30, LabelScheme::Rfpp3, &[0.5, 0.6, -0.1], 0, &settings),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn generation_is_deterministic() {
    let mix = uniform_mix(LabelScheme::Mslp4);
    let a = generate_dataset(40, LabelScheme::Mslp4, &mix, 21, &ImageSettings::default()).unwrap();
    let b = generate_dataset(40, LabelScheme::Mslp4, &mix, 21, &ImageSettings::default()).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(40, LabelScheme::Mslp4, &mix, 22, &ImageSettings::default()).unwrap();
    assert_ne!(a.images, c.images);
}
