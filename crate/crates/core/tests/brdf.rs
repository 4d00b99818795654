#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

use matforge_core::brdf::{
    directional_albedo, eval_brdf, lerp_material, sample_random_material, Direction, MaterialFull,
    MaterialParams, FIELD_NAMES, MATERIAL_VALUE_COUNT,
};
use matforge_core::Error;
use proptest::prelude::*;

fn material(p: [f64; 8], base: [f64; 3]) -> MaterialFull {
    MaterialFull {
        params: MaterialParams::from_array(p).unwrap(),
        base_color: base,
        ior: 1.5,
        opacity: 1.0,
    }
}

fn lambert() -> MaterialFull {
    material([0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0], [1.0; 3])
}

// Reference values from an independent 40-digit evaluation of the closed form.
#[allow(clippy::type_complexity)]
const REFERENCE: &[(usize, (f64, f64), (f64, f64), [f64; 3])] = &[
    (
        0,
        (0.0, 0.0),
        (0.0, 0.0),
        [0.4218343167073879, 0.4218343167073879, 0.4218343167073879],
    ),
    (
        0,
        (0.3, 0.2),
        (0.5, 2.9),
        [
            0.30946570039223001,
            0.30946570039223001,
            0.30946570039223001,
        ],
    ),
    (
        0,
        (1.2, -0.4),
        (0.9, 1.0),
        [
            0.083166567038267399,
            0.083166567038267399,
            0.083166567038267399,
        ],
    ),
    (
        0,
        (0.45, 1.1),
        (0.4, -2.1),
        [
            0.47477768582786211,
            0.47477768582786211,
            0.47477768582786211,
        ],
    ),
    (
        1,
        (0.0, 0.0),
        (0.0, 0.0),
        [51.879429152370541, 38.86894359950883, 21.521629529026554],
    ),
    (
        1,
        (0.3, 0.2),
        (0.5, 2.9),
        [
            0.21817078316619561,
            0.14579539933704614,
            0.049294887564846866,
        ],
    ),
    (
        1,
        (1.2, -0.4),
        (0.9, 1.0),
        [
            0.02397666925155148,
            0.015991438961178466,
            0.005344465240681116,
        ],
    ),
    (
        1,
        (0.45, 1.1),
        (0.4, -2.1),
        [11.071370392680606, 7.4550040285324113, 2.6331822096681533],
    ),
    (
        2,
        (0.0, 0.0),
        (0.0, 0.0),
        [
            0.039251213825922419,
            0.11037743056973598,
            0.20521238622815405,
        ],
    ),
    (
        2,
        (0.3, 0.2),
        (0.5, 2.9),
        [
            0.040662060291602686,
            0.11178699573650367,
            0.20662024299637165,
        ],
    ),
    (
        2,
        (1.2, -0.4),
        (0.9, 1.0),
        [
            0.032692290833478074,
            0.095873372842963401,
            0.18011481552227717,
        ],
    ),
    (
        2,
        (0.45, 1.1),
        (0.4, -2.1),
        [
            0.041665118026795009,
            0.11279199942240524,
            0.20762784128321889,
        ],
    ),
    (
        3,
        (0.0, 0.0),
        (0.0, 0.0),
        [33627.545955711195, 33627.545955711195, 33627.545955711195],
    ),
    (
        3,
        (0.3, 0.2),
        (0.5, 2.9),
        [
            0.18925092650242731,
            0.18925092650242731,
            0.18925092650242731,
        ],
    ),
    (
        3,
        (1.2, -0.4),
        (0.9, 1.0),
        [
            0.14911383088223286,
            0.14911383088223286,
            0.14911383088223286,
        ],
    ),
    (
        3,
        (0.45, 1.1),
        (0.4, -2.1),
        [
            0.19447592437367109,
            0.19447592437367109,
            0.19447592437367109,
        ],
    ),
];

fn reference_materials() -> [MaterialFull; 4] {
    [
        material([0.5; 8], [0.5; 3]),
        material([0.2, 0.9, 0.3, 0.6, 0.4, 0.1, 0.7, 0.25], [0.9, 0.6, 0.2]),
        material([0.8, 0.0, 1.0, 0.0, 0.0, 0.5, 1.0, 1.0], [0.1, 0.4, 0.8]),
        material([0.01, 0.3, 0.5, 1.0, 1.0, 0.02, 0.0, 0.0], [1.0; 3]),
    ]
}

#[test]
fn closed_form_matches_reference_evaluation() {
    let mats = reference_materials();
    for &(mi, (ti, pi), (to, po), expected) in REFERENCE {
        let got = eval_brdf(
            &mats[mi],
            &Direction::from_spherical(ti, pi),
            &Direction::from_spherical(to, po),
        )
        .unwrap();
        for c in 0..3 {
            let rel = (got[c] - expected[c]).abs() / expected[c];
            assert!(
                rel < 1e-9,
                "material {mi} ({ti},{pi})->({to},{po}) channel {c}: {} vs {}",
                got[c],
                expected[c]
            );
        }
    }
}

#[test]
fn lambert_is_one_over_pi() {
    let m = lambert();
    for (t, p) in [(0.0, 0.0), (0.4, 1.0), (1.3, -2.0)] {
        let f = eval_brdf(
            &m,
            &Direction::from_spherical(t, p),
            &Direction::from_spherical(0.7, 2.5),
        )
        .unwrap();
        for c in f {
            assert!((c - 1.0 / PI).abs() < 1e-12);
        }
    }
    let a = directional_albedo(&m, &Direction::from_spherical(0.5, 0.3), 20_000, 1).unwrap();
    for c in a {
        assert!((c - 1.0).abs() < 0.01, "{c}");
    }
}

#[test]
fn horizon_and_non_unit_directions_rejected() {
    let m = MaterialFull::default();
    let n = Direction::normal();
    let below = Direction::from_spherical(PI / 2.0 + 0.1, 0.0);
    assert!(matches!(eval_brdf(&m, &below, &n), Err(Error::Domain(_))));
    assert!(matches!(eval_brdf(&m, &n, &below), Err(Error::Domain(_))));
    assert!(Direction::new(0.0, 0.0, 1.1).is_err());
    assert!(directional_albedo(&m, &n, 0, 0).is_err());
}

#[test]
fn smooth_specular_peaks_at_mirror_direction() {
    let m = material([0.05, 1.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0], [0.9; 3]);
    let wi = Direction::from_spherical(0.5, 0.0);
    let mirror = eval_brdf(&m, &wi, &Direction::from_spherical(0.5, PI)).unwrap()[0];
    let off = eval_brdf(&m, &wi, &Direction::from_spherical(0.8, PI)).unwrap()[0];
    assert!(mirror > 100.0 * off);
}

#[test]
fn random_material_fields_in_range_and_unbiased() {
    let n = 5000;
    let mut sums = [0.0; MATERIAL_VALUE_COUNT];
    for seed in 0..n {
        let m = sample_random_material(seed);
        m.validate().unwrap();
        for (s, v) in sums.iter_mut().zip(m.to_values()) {
            *s += v;
        }
        assert_eq!(m, sample_random_material(seed));
    }
    for (i, s) in sums.iter().enumerate() {
        let mean = s / n as f64;
        let expected = if FIELD_NAMES[i] == "ior" { 1.75 } else { 0.5 };
        assert!(
            (mean - expected).abs() < 0.02 * expected / 0.5,
            "{}: {mean}",
            FIELD_NAMES[i]
        );
    }
    assert_ne!(sample_random_material(1), sample_random_material(2));
}

#[test]
fn lerp_endpoints_and_midpoint() {
    let a = material([0.0; 8], [0.0; 3]);
    let b = material([1.0; 8], [1.0; 3]);
    assert_eq!(lerp_material(&a, &b, 0.0).unwrap(), a);
    assert_eq!(lerp_material(&a, &b, 1.0).unwrap(), b);
    assert_eq!(
        lerp_material(&a, &b, 0.5).unwrap().params,
        MaterialParams::splat(0.5)
    );
    assert!(lerp_material(&a, &b, 1.5).is_err());
    assert!(lerp_material(&a, &b, -0.1).is_err());
}

fn arb_material() -> impl Strategy<Value = MaterialFull> {
    (
        prop::array::uniform8(0.0..=1.0f64),
        prop::array::uniform3(0.0..=1.0f64),
        1.0..=3.0f64,
        0.0..=1.0f64,
    )
        .prop_map(|(p, b, ior, opacity)| MaterialFull {
            params: MaterialParams::from_array(p).unwrap(),
            base_color: b,
            ior,
            opacity,
        })
}

fn arb_direction() -> impl Strategy<Value = Direction> {
    (0.0..1.55f64, -PI..PI).prop_map(|(t, p)| Direction::from_spherical(t, p))
}

proptest! {
    #[test]
    fn reciprocal_finite_nonnegative(m in arb_material(), wi in arb_direction(), wo in arb_direction()) {
        let a = eval_brdf(&m, &wi, &wo).unwrap();
        let b = eval_brdf(&m, &wo, &wi).unwrap();
        for c in 0..3 {
            prop_assert!(a[c].is_finite() && a[c] >= 0.0);
            prop_assert!((a[c] - b[c]).abs() <= 1e-6 * a[c].max(1.0));
        }
    }

    #[test]
    fn lerp_stays_valid(a in arb_material(), b in arb_material(), t in 0.0..=1.0f64) {
        let m = lerp_material(&a, &b, t).unwrap();
        prop_assert!(m.validate().is_ok());
    }

    #[test]
    fn values_round_trip(m in arb_material()) {
        prop_assert_eq!(MaterialFull::from_values(&m.to_values()).unwrap(), m);
    }

    #[test]
    fn out_of_range_rejected(i in 0usize..8, v in prop_oneof![-5.0..-1e-9f64, 1.0 + 1e-9..5.0f64]) {
        let mut p = [0.5; 8];
        p[i] = v;
        let is_out_of_range = matches!(MaterialParams::from_array(p), Err(Error::OutOfRange { .. }));
        prop_assert!(is_out_of_range);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn small_parameter_steps_give_small_changes(
        m in arb_material(),
        wi in arb_direction(),
        wo in arb_direction(),
        i in 0usize..8,
        up in any::<bool>(),
    ) {
        let mut p = m.params.to_array();
        let h = if up { 1e-4 } else { -1e-4 };
        p[i] = (p[i] + h).clamp(0.0, 1.0);
        let n = MaterialFull { params: MaterialParams::from_array(p).unwrap(), ..m };
        let a = eval_brdf(&m, &wi, &wo).unwrap();
        let b = eval_brdf(&n, &wi, &wo).unwrap();
        for c in 0..3 {
            prop_assert!((a[c] - b[c]).abs() <= 1e-2, "field {} channel {}: {} -> {}", i, c, a[c], b[c]);
        }
    }
}
