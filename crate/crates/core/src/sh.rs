//! Real spherical harmonics through band 3.
//!
//! Band-major ordering and the hard-coded constants used by splatting
//! renderers. The same basis is used when rendering and when solving, which
//! is all the colorization solve relies on.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MAX_SH_ORDER: usize = 3;

/// `1 / √(4π)`, the constant band-0 basis value.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for order `L`: `(L + 1)²`.
pub const fn coeffs_per_channel(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// SH band of the 0-based basis index `m`.
pub fn band_of(m: usize) -> usize {
    let mut band = 0;
    while coeffs_per_channel(band) <= m {
        band += 1;
    }
    band
}

/// Basis values `Y_m(d)` for `m = 0..(L+1)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShBasis {
    values: [f64; 16],
    len: usize,
}

impl ShBasis {
    pub fn values(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn order(&self) -> usize {
        match self.len {
            1 => 0,
            4 => 1,
            9 => 2,
            _ => 3,
        }
    }
}

impl std::ops::Index<usize> for ShBasis {
    type Output = f64;

    fn index(&self, m: usize) -> &f64 {
        &self.values()[m]
    }
}

/// Evaluates the real SH basis of order `order` at a unit `direction`.
pub fn sh_basis(order: usize, direction: &Vector3<f64>) -> Result<ShBasis> {
    if order > MAX_SH_ORDER {
        return Err(Error::InvalidInput(format!(
            "SH order {order} exceeds the supported maximum {MAX_SH_ORDER}"
        )));
    }
    let norm = direction.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "SH direction must be unit length, got norm {norm}"
        )));
    }
    Ok(sh_basis_unchecked(order, direction))
}

/// [`sh_basis`] without the argument checks; callers guarantee a unit
/// direction and `order <= 3`.
pub(crate) fn sh_basis_unchecked(order: usize, d: &Vector3<f64>) -> ShBasis {
    let mut v = [0.0; 16];
    v[0] = SH_C0;
    if order >= 1 {
        let (x, y, z) = (d.x, d.y, d.z);
        v[1] = -SH_C1 * y;
        v[2] = SH_C1 * z;
        v[3] = -SH_C1 * x;
        if order >= 2 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            let (xy, yz, xz) = (x * y, y * z, x * z);
            v[4] = SH_C2[0] * xy;
            v[5] = SH_C2[1] * yz;
            v[6] = SH_C2[2] * (2.0 * zz - xx - yy);
            v[7] = SH_C2[3] * xz;
            v[8] = SH_C2[4] * (xx - yy);
            if order >= 3 {
                v[9] = SH_C3[0] * y * (3.0 * xx - yy);
                v[10] = SH_C3[1] * xy * z;
                v[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
                v[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
                v[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
                v[14] = SH_C3[5] * z * (xx - yy);
                v[15] = SH_C3[6] * x * (xx - 3.0 * yy);
            }
        }
    }
    ShBasis {
        values: v,
        len: coeffs_per_channel(order),
    }
}

/// `C(d) = Σ_m c^m Y_m(d)` for each channel.
///
/// `coeffs` is channel-major, `K * (L + 1)²` long. No offset or clamping is
/// applied, so the result is linear in the coefficients.
pub fn eval_color(coeffs: &[f64], basis: &ShBasis) -> Result<Vec<f64>> {
    let m = basis.len();
    if m == 0 || coeffs.len() % m != 0 || coeffs.is_empty() {
        return Err(Error::mismatch(
            "SH coefficient count",
            format!("a multiple of {m}"),
            coeffs.len(),
        ));
    }
    Ok(coeffs
        .chunks_exact(m)
        .map(|channel| eval_channel(channel, basis))
        .collect())
}

#[inline]
pub(crate) fn eval_channel(coeffs: &[f64], basis: &ShBasis) -> f64 {
    coeffs
        .iter()
        .zip(basis.values())
        .map(|(c, y)| c * y)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn band_zero_is_constant() {
        let b = sh_basis(0, &Vector3::new(0.6, 0.0, 0.8)).unwrap();
        assert_eq!(b.values(), &[SH_C0]);
        assert!((SH_C0 - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-16);
    }

    #[test]
    fn odd_functions_vanish_on_z_axis() {
        let b = sh_basis(1, &Vector3::z()).unwrap();
        assert_eq!(b[1], 0.0);
        assert_eq!(b[3], 0.0);
        assert!(b[2] > 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(sh_basis(4, &Vector3::z()).is_err());
        assert!(sh_basis(2, &Vector3::new(0.0, 0.0, 2.0)).is_err());
    }

    /// Fibonacci-lattice quadrature of `∫ Y_a Y_b dΩ`.
    #[test]
    fn basis_is_orthonormal_on_sphere() {
        let n = 10_000;
        let golden = PI * (3.0 - 5f64.sqrt());
        let mut gram = [[0.0f64; 16]; 16];
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let d = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let b = sh_basis(3, &d).unwrap();
            for a in 0..16 {
                for c in 0..16 {
                    gram[a][c] += b[a] * b[c] * 4.0 * PI / n as f64;
                }
            }
        }
        for (a, row) in gram.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let want = if a == c { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 2e-2, "gram[{a}][{c}] = {v}");
            }
        }
    }

    #[test]
    fn eval_color_examples() {
        let d = Vector3::new(0.0, 0.6, -0.8);
        let b0 = sh_basis(0, &d).unwrap();
        let c = eval_color(&[(4.0 * PI).sqrt()], &b0).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15);

        let b3 = sh_basis(3, &d).unwrap();
        assert_eq!(eval_color(&[0.0; 16], &b3).unwrap(), vec![0.0]);
        for m in 0..16 {
            let mut e = [0.0; 16];
            e[m] = 1.0;
            assert_eq!(eval_color(&e, &b3).unwrap()[0], b3[m]);
        }
    }

    #[test]
    fn eval_color_rejects_mismatch() {
        let b = sh_basis(1, &Vector3::z()).unwrap();
        assert!(eval_color(&[1.0; 5], &b).is_err());
        assert_eq!(eval_color(&[1.0; 8], &b).unwrap().len(), 2);
    }

    #[test]
    fn band_lookup() {
        let bands: Vec<usize> = (0..16).map(band_of).collect();
        assert_eq!(bands, [0, 1, 1, 1, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn unit() -> impl Strategy<Value = Vector3<f64>> {
            (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
                .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-4)
                .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
        }

        proptest! {
            #[test]
            fn eval_is_linear(
                d in unit(),
                u in prop::collection::vec(-2.0f64..2.0, 16),
                v in prop::collection::vec(-2.0f64..2.0, 16),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
            ) {
                let basis = sh_basis(3, &d).unwrap();
                let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
                let lhs = eval_color(&mix, &basis).unwrap()[0];
                let rhs = a * eval_color(&u, &basis).unwrap()[0] + b * eval_color(&v, &basis).unwrap()[0];
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }

            #[test]
            fn order_zero_ignores_direction(d1 in unit(), d2 in unit(), c in -5.0f64..5.0) {
                let a = eval_color(&[c], &sh_basis(0, &d1).unwrap()).unwrap();
                let b = eval_color(&[c], &sh_basis(0, &d2).unwrap()).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
