//! Polynomial roots and the power-sum <-> elementary-symmetric bridge.
//!
//! Spectra here come from characteristic polynomials assembled out of trace
//! moments, so we need two independent solvers: closed-form (quadratic,
//! Cardano, Ferrari) for degree <= 4, and Durand-Kerner iteration for higher
//! degrees and as a cross-check oracle. Both operate on monic polynomials
//! with real coefficients but may produce complex roots; callers decide how
//! much imaginary part to tolerate.

use num_complex::Complex64;

type C64 = Complex64;

/// Newton's identity: e_k = (1/k) Σ_{i=1..k} (-1)^{i-1} e_{k-i} p_i,  e_0 = 1.
/// `power_sums[i]` holds p_{i+1}. Returns e_1..=e_n.
pub fn elementary_from_power_sums(power_sums: &[f64]) -> Vec<f64> {
    let n = power_sums.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for k in 1..=n {
        let mut acc = 0.0;
        for i in 1..=k {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * e[k - i] * power_sums[i - 1];
        }
        e[k] = acc / k as f64;
    }
    e.remove(0);
    e
}

/// Inverse direction: p_k = e_1 p_{k-1} - e_2 p_{k-2} + ... + (-1)^{k-1} k e_k.
/// Used to verify a reconstructed spectrum reproduces its input moments.
pub fn power_sums_from_elementary(elementary: &[f64], up_to: usize) -> Vec<f64> {
    let n = elementary.len();
    let e = |k: usize| -> f64 {
        if k == 0 {
            1.0
        } else if k <= n {
            elementary[k - 1]
        } else {
            0.0
        }
    };
    let mut p = vec![0.0; up_to];
    for k in 1..=up_to {
        let mut acc = 0.0;
        for i in 1..k {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * e(i) * p[k - i - 1];
        }
        let sign_k = if k % 2 == 1 { 1.0 } else { -1.0 };
        acc += sign_k * k as f64 * e(k);
        p[k - 1] = acc;
    }
    p
}

/// Power sums of a given (real) spectrum, p_k = Σ λ_i^k for k = 1..=up_to.
pub fn power_sums_of(spectrum: &[f64], up_to: usize) -> Vec<f64> {
    (1..=up_to)
        .map(|k| spectrum.iter().map(|&l| l.powi(k as i32)).sum())
        .collect()
}

/// Roots of x^2 + bx + c.
fn roots_quadratic(b: f64, c: f64) -> [C64; 2] {
    let disc = C64::new(b * b - 4.0 * c, 0.0).sqrt();
    // Citardauq pairing: avoid cancellation by computing the large-magnitude
    // root first and recovering the other from the product.
    let q = if b >= 0.0 { -(C64::new(b, 0.0) + disc) * 0.5 } else { (disc - b) * 0.5 };
    if q.norm() > 0.0 {
        [q, C64::new(c, 0.0) / q]
    } else {
        [C64::ZERO, C64::ZERO]
    }
}

/// Roots of x^3 + ax^2 + bx + c (Cardano).
fn roots_cubic(a: f64, b: f64, c: f64) -> [C64; 3] {
    // depress: x = t - a/3, t^3 + pt + q = 0
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let shift = -a / 3.0;
    let disc = C64::new(q * q / 4.0 + p * p * p / 27.0, 0.0);
    let sq = disc.sqrt();
    let mut u3 = C64::new(-q / 2.0, 0.0) + sq;
    if u3.norm() < 1e-30 {
        u3 = C64::new(-q / 2.0, 0.0) - sq;
    }
    if u3.norm() < 1e-30 {
        // p == q == 0: triple root at the shift point
        return [C64::new(shift, 0.0); 3];
    }
    let u = u3.powf(1.0 / 3.0);
    let omega = C64::new(-0.5, 3f64.sqrt() / 2.0);
    let mut out = [C64::ZERO; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let uk = u * omega.powu(k as u32);
        *slot = uk - p / (3.0 * uk) + shift;
    }
    out
}

/// Largest real root of a cubic; used by the quartic resolvent. The resolvent
/// of a polynomial with real roots always has a real root >= 0.
fn cubic_largest_real(a: f64, b: f64, c: f64) -> f64 {
    roots_cubic(a, b, c)
        .iter()
        .filter(|z| z.im.abs() < 1e-8 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Roots of x^4 + ax^3 + bx^2 + cx + d (Ferrari via resolvent cubic).
fn roots_quartic(a: f64, b: f64, c: f64, d: f64) -> [C64; 4] {
    // depress: x = t - a/4, t^4 + pt^2 + qt + r = 0
    let p = b - 3.0 * a * a / 8.0;
    let q = c - a * b / 2.0 + a * a * a / 8.0;
    let r = d - a * c / 4.0 + a * a * b / 16.0 - 3.0 * a * a * a * a / 256.0;
    let shift = -a / 4.0;
    let scale = 1.0 + p.abs() + q.abs() + r.abs();

    if q.abs() < 1e-14 * scale {
        // biquadratic: t^2 solves y^2 + py + r = 0
        let ys = roots_quadratic(p, r);
        let mut out = [C64::ZERO; 4];
        for (i, y) in ys.iter().enumerate() {
            let s = y.sqrt();
            out[2 * i] = s + shift;
            out[2 * i + 1] = -s + shift;
        }
        return out;
    }

    // resolvent cubic in m: m^3 + p m^2 + (p^2/4 - r) m - q^2/8 = 0
    let m = cubic_largest_real(p, p * p / 4.0 - r, -q * q / 8.0);
    let m = m.max(1e-300);
    let sqrt2m = C64::new(2.0 * m, 0.0).sqrt();
    // t^4 + pt^2 + qt + r = (t^2 + √(2m) t + p/2 + m - q/(2√(2m)))
    //                     · (t^2 - √(2m) t + p/2 + m + q/(2√(2m)))
    let base = C64::new(p / 2.0 + m, 0.0);
    let corr = C64::new(q, 0.0) / (sqrt2m * 2.0);
    let mut out = [C64::ZERO; 4];
    for (pair, sign) in [(0usize, 1.0), (2usize, -1.0)] {
        let bq = sqrt2m * sign;
        let cq = base - corr * sign;
        let disc = (bq * bq - cq * 4.0).sqrt();
        out[pair] = (-bq + disc) * 0.5 + shift;
        out[pair + 1] = (-bq - disc) * 0.5 + shift;
    }
    out
}

/// Roots of a monic polynomial x^n + coeffs[0] x^{n-1} + ... + coeffs[n-1]
/// by Durand-Kerner simultaneous iteration.
pub fn durand_kerner(coeffs: &[f64]) -> Vec<C64> {
    let n = coeffs.len();
    if n == 0 {
        return vec![];
    }
    let eval = |z: C64| -> C64 {
        let mut acc = C64::ONE;
        for &c in coeffs {
            acc = acc * z + c;
        }
        acc
    };
    let r = 1.0 + coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
    let seed = C64::new(0.4, 0.9);
    let mut z: Vec<C64> = (0..n).map(|j| seed.powu(j as u32 + 1) * r).collect();
    for _ in 0..200 {
        let mut max_step = 0.0f64;
        for j in 0..n {
            let mut denom = C64::ONE;
            for k in 0..n {
                if k != j {
                    denom *= z[j] - z[k];
                }
            }
            if denom.norm() < 1e-300 {
                continue;
            }
            let step = eval(z[j]) / denom;
            z[j] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-12 {
            break;
        }
    }
    z
}

/// Roots of a monic real polynomial: closed form for degree <= 4,
/// Durand-Kerner above that.
pub fn monic_roots(coeffs: &[f64]) -> Vec<C64> {
    match coeffs.len() {
        0 => vec![],
        1 => vec![C64::new(-coeffs[0], 0.0)],
        2 => roots_quadratic(coeffs[0], coeffs[1]).to_vec(),
        3 => roots_cubic(coeffs[0], coeffs[1], coeffs[2]).to_vec(),
        4 => roots_quartic(coeffs[0], coeffs[1], coeffs[2], coeffs[3]).to_vec(),
        _ => durand_kerner(coeffs),
    }
}

/// Collapse roots closer than `tol` to their cluster mean. Keeps multiplicity:
/// a cluster of size m contributes its mean m times.
pub fn cluster_roots(roots: &[C64], tol: f64) -> Vec<C64> {
    let mut remaining: Vec<C64> = roots.to_vec();
    let mut out = Vec::with_capacity(roots.len());
    while let Some(first) = remaining.first().copied() {
        let (cluster, rest): (Vec<C64>, Vec<C64>) =
            remaining.iter().partition(|z| (*z - first).norm() < tol);
        let mean = cluster.iter().sum::<C64>() / cluster.len() as f64;
        out.extend(std::iter::repeat(mean).take(cluster.len()));
        remaining = rest;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sort_re(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    fn real_roots(coeffs: &[f64]) -> Vec<f64> {
        monic_roots(coeffs)
            .iter()
            .map(|z| {
                assert!(z.im.abs() < 1e-8, "unexpected complex root {z}");
                z.re
            })
            .collect()
    }

    fn coeffs_from_roots(roots: &[f64]) -> Vec<f64> {
        // expand Π (x - r) into monic coefficients
        let mut c = vec![1.0];
        for &r in roots {
            let mut next = vec![0.0; c.len() + 1];
            for (i, &ci) in c.iter().enumerate() {
                next[i] += ci;
                next[i + 1] -= ci * r;
            }
            c = next;
        }
        c.remove(0);
        c
    }

    #[test]
    fn quadratic_cubic_quartic_roundtrip() {
        for roots in [
            vec![0.25, 0.75],
            vec![-1.0, 0.0, 1.0],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.5, 0.5, -0.25, 0.25],
        ] {
            let got = sort_re(real_roots(&coeffs_from_roots(&roots)));
            let want = sort_re(roots);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-8, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn quartic_biquadratic_branch() {
        // symmetric spectrum exercises the q ≈ 0 shortcut
        let roots = vec![0.6, -0.6, 0.3, -0.3];
        let got = sort_re(real_roots(&coeffs_from_roots(&roots)));
        let want = sort_re(roots);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
    }

    #[test]
    fn quartic_degenerate_pair() {
        let roots = vec![0.5, 0.5, 0.5, -0.5];
        let got = sort_re(real_roots(&coeffs_from_roots(&roots)));
        for (g, w) in got.iter().zip(&sort_re(roots)) {
            assert!((g - w).abs() < 1e-6, "{got:?}");
        }
    }

    #[test]
    fn durand_kerner_matches_closed_form() {
        let roots = vec![0.45, 0.25, 0.2, 0.1];
        let coeffs = coeffs_from_roots(&roots);
        let dk = sort_re(
            durand_kerner(&coeffs).iter().map(|z| z.re).collect::<Vec<_>>(),
        );
        let cf = sort_re(real_roots(&coeffs));
        for (a, b) in dk.iter().zip(&cf) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn durand_kerner_degree_nine() {
        let roots: Vec<f64> = (1..=9).map(|i| i as f64 / 45.0).collect();
        let coeffs = coeffs_from_roots(&roots);
        let got = sort_re(durand_kerner(&coeffs).iter().map(|z| z.re).collect());
        for (g, w) in got.iter().zip(&roots) {
            assert!((g - w).abs() < 1e-7, "{got:?}");
        }
    }

    #[test]
    fn newton_identities_roundtrip() {
        let spectrum = [0.4, 0.3, 0.2, 0.1];
        let p = power_sums_of(&spectrum, 4);
        let e = elementary_from_power_sums(&p);
        // e1 = Σλ = 1, e4 = Πλ
        assert!((e[0] - 1.0).abs() < 1e-14);
        assert!((e[3] - 0.4 * 0.3 * 0.2 * 0.1).abs() < 1e-14);
        let p_back = power_sums_from_elementary(&e, 6);
        let p6 = power_sums_of(&spectrum, 6);
        for (a, b) in p_back.iter().zip(&p6) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn cluster_preserves_multiplicity() {
        let roots = vec![
            C64::new(0.5, 1e-9),
            C64::new(0.5 + 1e-9, 0.0),
            C64::new(-0.1, 0.0),
        ];
        let c = cluster_roots(&roots, 1e-7);
        assert_eq!(c.len(), 3);
        let near_half = c.iter().filter(|z| (z.re - 0.5).abs() < 1e-6).count();
        assert_eq!(near_half, 2);
    }
}
