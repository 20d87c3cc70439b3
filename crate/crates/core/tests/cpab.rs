use pstn_core::cpab::{build_basis, Boundary, ConstraintBasis, Tessellation};
use pstn_core::{rng_from_seed, Rng};
use rand::Rng as _;

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Rank by Gaussian elimination with partial pivoting.
fn rank(rows: &[Vec<f64>]) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let cols = m.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..m.len()).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())) else {
            break;
        };
        if m[p][c].abs() < 1e-9 {
            continue;
        }
        m.swap(r, p);
        for i in 0..m.len() {
            if i != r {
                let f = m[i][c] / m[r][c];
                if f != 0.0 {
                    for k in c..cols {
                        m[i][k] -= f * m[r][k];
                    }
                }
            }
        }
        r += 1;
        if r == m.len() {
            break;
        }
    }
    r
}

fn check_basis(b: &ConstraintBasis) {
    let n = b.tessellation().num_raw_params();
    let d = b.dim();
    let mut worst_lb: f64 = 0.0;
    for row in b.constraints() {
        for j in 0..d {
            let v: f64 = (0..n).map(|i| row[i] * b.entry(i, j)).sum();
            worst_lb = worst_lb.max(v.abs());
        }
    }
    assert!(worst_lb < 1e-10, "{:?}: |LB| = {worst_lb}", b.tessellation());
    for j in 0..d {
        for k in 0..d {
            let v: f64 = (0..n).map(|i| b.entry(i, j) * b.entry(i, k)).sum();
            let want = if j == k { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10, "BᵀB[{j}][{k}] = {v}");
        }
    }
}

#[test]
fn one_dimensional_bases_are_orthonormal_null_spaces() {
    for cells in 2..=16 {
        let b = build_basis(Tessellation::Intervals { cells }, Boundary::ZeroVelocity).unwrap();
        check_basis(&b);
        assert_eq!(b.dim(), cells - 1);
        assert_eq!(b.dim(), 2 * cells - rank(b.constraints()));
        let free = build_basis(Tessellation::Intervals { cells }, Boundary::Free).unwrap();
        check_basis(&free);
        assert_eq!(free.dim(), cells + 1);
    }
}

#[test]
fn two_dimensional_basis() {
    let b = build_basis(Tessellation::Triangles { nx: 2, ny: 2 }, Boundary::ZeroVelocity).unwrap();
    check_basis(&b);
    // a continuous piecewise-linear 2D field is fixed by its vertex values:
    // 9 corners + 4 centers, 8 corners pinned by the boundary
    assert_eq!(b.dim(), 2 * (9 + 4 - 8));
    assert_eq!(b.dim(), 96 - rank(b.constraints()));
    for (nx, ny) in [(1, 1), (3, 2)] {
        let free = build_basis(Tessellation::Triangles { nx, ny }, Boundary::Free).unwrap();
        check_basis(&free);
        assert_eq!(free.dim(), 2 * ((nx + 1) * (ny + 1) + nx * ny));
    }
}

#[test]
fn single_cell_matches_exponential_solution() {
    let b = build_basis(Tessellation::Intervals { cells: 1 }, Boundary::Free).unwrap();
    let mut rng = rng_from_seed(3);
    let mut checked = 0;
    while checked < 20 {
        let theta = uniform(2, -0.3, 0.3, &mut rng);
        let p = b.cell_params(&theta);
        let (a, c) = (p[0], p[1]);
        let x0 = uniform(5, 0.3, 0.7, &mut rng);
        let exact: Vec<f64> = x0.iter().map(|&x| (x + c / a) * a.exp() - c / a).collect();
        if exact.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            continue;
        }
        let got = b.integrate(&theta, &x0, 100).unwrap();
        for (g, e) in got.iter().zip(&exact) {
            assert!((g - e).abs() < 1e-8, "{g} vs {e}");
        }
        checked += 1;
    }
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn coarse_flow_and_inverse_composition() {
    let cases = [
        (Tessellation::Intervals { cells: 10 }, 1),
        (Tessellation::Triangles { nx: 2, ny: 2 }, 2),
    ];
    for (tess, dim) in cases {
        let b = build_basis(tess, Boundary::ZeroVelocity).unwrap();
        for seed in 0..5 {
            let mut rng = rng_from_seed(seed);
            let theta = uniform(b.dim(), -1.0, 1.0, &mut rng);
            let neg: Vec<f64> = theta.iter().map(|t| -t).collect();
            let x = uniform(50 * dim, 0.0, 1.0, &mut rng);
            let coarse = b.integrate(&theta, &x, 100).unwrap();
            let fine = b.integrate(&theta, &x, 10_000).unwrap();
            assert!(sup(&coarse, &fine) < 1e-3);
            let back = b.integrate(&neg, &coarse, 100).unwrap();
            assert!(sup(&back, &x) < 1e-3, "{tess:?}: {}", sup(&back, &x));
        }
    }
}

#[test]
fn flow_composes_in_time() {
    let b = build_basis(Tessellation::Triangles { nx: 2, ny: 2 }, Boundary::ZeroVelocity).unwrap();
    let mut rng = rng_from_seed(8);
    let theta = uniform(b.dim(), -1.0, 1.0, &mut rng);
    let x = uniform(40, 0.0, 1.0, &mut rng);
    let whole = b.integrate_for(&theta, &x, 10_000, 1.0).unwrap();
    let first = b.integrate_for(&theta, &x, 4_000, 0.4).unwrap();
    let second = b.integrate_for(&theta, &first, 6_000, 0.6).unwrap();
    assert!(sup(&whole, &second) < 1e-8, "{}", sup(&whole, &second));
}

#[test]
fn velocity_is_continuous_across_cells() {
    let mut rng = rng_from_seed(2);
    let b = build_basis(Tessellation::Intervals { cells: 7 }, Boundary::ZeroVelocity).unwrap();
    let theta = uniform(b.dim(), -1.0, 1.0, &mut rng);
    let f = b.field(&theta).unwrap();
    let (mut l, mut r, mut v) = ([0.0], [0.0], [0.0]);
    for k in 1..7 {
        let x = [k as f64 / 7.0];
        f.eval_in_cell(k - 1, &x, &mut l);
        f.eval_in_cell(k, &x, &mut r);
        assert!((l[0] - r[0]).abs() < 1e-12);
    }
    f.eval(&[0.0], &mut v);
    assert!(v[0].abs() < 1e-12);
    f.eval(&[1.0], &mut v);
    assert!(v[0].abs() < 1e-12);

    let tess = Tessellation::Triangles { nx: 2, ny: 2 };
    let b = build_basis(tess, Boundary::ZeroVelocity).unwrap();
    let theta = uniform(b.dim(), -1.0, 1.0, &mut rng);
    let f = b.field(&theta).unwrap();
    let (mut va, mut vb) = ([0.0; 2], [0.0; 2]);
    let mut shared = |ca: usize, cb: usize, p: [f64; 2]| {
        f.eval_in_cell(ca, &p, &mut va);
        f.eval_in_cell(cb, &p, &mut vb);
        assert!(sup(&va, &vb) < 1e-12, "cells {ca}/{cb} at {p:?}");
    };
    for _ in 0..200 {
        let s = rng.random_range(0.0..1.0);
        for rect in 0..4 {
            let (x0, y0) = ((rect % 2) as f64 * 0.5, (rect / 2) as f64 * 0.5);
            let c = [x0 + 0.25, y0 + 0.25];
            let towards = |cx: f64, cy: f64| [c[0] + s * (cx - c[0]), c[1] + s * (cy - c[1])];
            let base = 4 * rect;
            shared(base, base + 2, towards(x0, y0));
            shared(base, base + 3, towards(x0, y0 + 0.5));
            shared(base + 1, base + 2, towards(x0 + 0.5, y0));
            shared(base + 1, base + 3, towards(x0 + 0.5, y0 + 0.5));
        }
        let t = s * 0.5;
        shared(1, 4, [0.5, t]);
        shared(3, 8 + 2, [t, 0.5]);
    }
    for t in [0.0, 0.3, 0.5, 1.0] {
        for p in [[t, 0.0], [t, 1.0], [0.0, t], [1.0, t]] {
            f.eval(&p, &mut va);
            assert!(va[0].abs() < 1e-12 && va[1].abs() < 1e-12);
        }
    }
}

#[test]
fn warps_are_orientation_preserving() {
    let b = build_basis(Tessellation::Triangles { nx: 2, ny: 2 }, Boundary::ZeroVelocity).unwrap();
    let mut rng = rng_from_seed(5);
    for _ in 0..5 {
        let theta = uniform(b.dim(), -1.5, 1.5, &mut rng);
        for _ in 0..20 {
            let x = uniform(2, 0.05, 0.95, &mut rng);
            let h = 1e-6;
            let at = |p: [f64; 2]| b.integrate(&theta, &p, 100).unwrap();
            let dx: Vec<f64> = at([x[0] + h, x[1]]).iter().zip(at([x[0] - h, x[1]])).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let dy: Vec<f64> = at([x[0], x[1] + h]).iter().zip(at([x[0], x[1] - h])).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            assert!(dx[0] * dy[1] - dx[1] * dy[0] > 0.0);
        }
    }
    let b = build_basis(Tessellation::Intervals { cells: 12 }, Boundary::ZeroVelocity).unwrap();
    let theta = uniform(b.dim(), -3.0, 3.0, &mut rng);
    let xs: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
    let ys = b.integrate(&theta, &xs, 100).unwrap();
    assert!(ys.windows(2).all(|w| w[1] > w[0]));
    assert!(ys[0].abs() < 1e-12 && (ys[200] - 1.0).abs() < 1e-12);
}
