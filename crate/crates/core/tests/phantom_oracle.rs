//! Rasterization checked against an independent implementation of the
//! modified Shepp-Logan table.

use proptest::prelude::*;

use prmr::phantom::{make_phantom, Ellipse, EllipsePhantomSpec};

// intensity, semi-axis along x, semi-axis along y, x0, y0, rotation (deg)
const TABLE: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Value of the quadratic form `A dx² + B dx dy + C dy²`; inside iff <= 1.
fn quad(e: &[f64; 6], x: f64, y: f64) -> f64 {
    let [_, a, b, x0, y0, deg] = *e;
    let (s, c) = deg.to_radians().sin_cos();
    let (dx, dy) = (x - x0, y - y0);
    let qa = c * c / (a * a) + s * s / (b * b);
    let qb = 2.0 * c * s * (1.0 / (a * a) - 1.0 / (b * b));
    let qc = s * s / (a * a) + c * c / (b * b);
    qa * dx * dx + qb * dx * dy + qc * dy * dy
}

/// Pixel values from the table plus a mask of pixels sitting on an ellipse
/// edge, where rounding may legitimately decide membership either way.
fn oracle(table: &[[f64; 6]], n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut v = vec![0.0; n * n];
    let mut edge = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            // pixel centres, y up, [-1, 1] spanning the full extent
            let x = (2.0 * c as f64 + 1.0) / n as f64 - 1.0;
            let y = 1.0 - (2.0 * r as f64 + 1.0) / n as f64;
            for e in table {
                let q = quad(e, x, y);
                if (q - 1.0).abs() < 1e-9 {
                    edge[r * n + c] = true;
                }
                if q <= 1.0 {
                    v[r * n + c] += e[0];
                }
            }
        }
    }
    (v, edge)
}

fn spec_of(table: &[[f64; 6]]) -> EllipsePhantomSpec {
    EllipsePhantomSpec::new(
        table
            .iter()
            .map(|&[intensity, axis_a, axis_b, center_x, center_y, rotation]| Ellipse {
                center_x,
                center_y,
                axis_a,
                axis_b,
                rotation,
                intensity,
            })
            .collect(),
    )
}

fn compare(img: &[f64], want: &[f64], edge: &[bool]) {
    for i in 0..want.len() {
        if !edge[i] {
            assert!((img[i] - want[i]).abs() < 1e-12, "pixel {i}: {} vs {}", img[i], want[i]);
        }
    }
}

#[test]
fn bundled_table_matches_reference_rasterizer() {
    for n in [16, 64, 128, 129] {
        let img = make_phantom(&EllipsePhantomSpec::shepp_logan(), n).unwrap();
        let (want, edge) = oracle(&TABLE, n);
        compare(img.data(), &want, &edge);
    }
}

#[test]
fn known_pixel_values() {
    let img = make_phantom(&EllipsePhantomSpec::shepp_logan(), 128).unwrap();
    // inside the skull and brain outlines only
    assert!((img.get(20, 64) - 0.2).abs() < 1e-12);
    // outside everything
    assert_eq!(img.get(0, 0), 0.0);
    // skull ring
    assert!((img.get(64, 21) - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn random_ellipse_matches_reference(
        a in 0.05f64..0.9, b in 0.05f64..0.9, x0 in -0.5f64..0.5, y0 in -0.5f64..0.5,
        deg in -90.0f64..90.0, v in -1.0f64..1.0, n in 16usize..80,
    ) {
        let table = [[v, a, b, x0, y0, deg]];
        let img = make_phantom(&spec_of(&table), n).unwrap();
        let (want, edge) = oracle(&table, n);
        compare(img.data(), &want, &edge);
    }
}
