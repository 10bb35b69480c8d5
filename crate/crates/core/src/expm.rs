//! Matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant (Higham 2005).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("expm of a {}x{} matrix", n, a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expm input".into()));
    }
    let nrm = norm1(a);
    let squarings = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);

    let ident = DMatrix::<f64>::identity(n, n);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::NonFinite("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationOverflow("matrix exponential overflowed".into()));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..terms {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn zero_is_identity() {
        let e = expm(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.5, 2.0]));
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(e[(1, 1)], 0.5f64.exp(), epsilon = 1e-14);
        assert_relative_eq!(e[(2, 2)], 2.0f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn rotation() {
        let t = 1.3;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], t.cos(), epsilon = 1e-14);
        assert_relative_eq!(e[(1, 0)], t.sin(), epsilon = 1e-14);
    }

    #[test]
    fn nilpotent_and_scaled() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 2)], 0.5, epsilon = 1e-15);
        // large norm exercises the squaring phase
        let b = DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 2.0, -4.0]) * 3.0;
        let eb = expm(&b).unwrap();
        let reference = taylor(&(&b / 64.0), 40).pow(64);
        assert_relative_eq!(eb, reference, epsilon = 1e-12);
    }
}
