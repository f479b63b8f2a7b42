//! Pixel-wise MSE and PSNR on the 8-bit view, plus learning-curve reports.

mod curves;

pub use curves::{
    curve_report, read_metrics_stream, Comparison, Condition, ConditionSummary, CurveReport, MetricRecord,
    ReportOptions,
};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Value reported for identical images, where the ratio is unbounded.
pub const PSNR_MAX: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// Set when the images are identical and `db` is the [`PSNR_MAX`] sentinel.
    pub exact: bool,
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Shape(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Sum of squared 8-bit differences over all 3·N·M samples.
pub fn squared_error_sum(a: &Image, b: &Image) -> Result<u64> {
    check_dims(a, b)?;
    Ok(a.as_bytes()
        .iter()
        .zip(b.as_bytes())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum())
}

/// Mean squared error in squared intensity units.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    let sum = squared_error_sum(a, b)?;
    Ok(sum as f64 / a.as_bytes().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> Psnr {
    if mse <= 0.0 {
        Psnr { db: PSNR_MAX, exact: true }
    } else {
        Psnr { db: 20.0 * (255.0 / mse.sqrt()).log10(), exact: false }
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<Psnr> {
    Ok(psnr_from_mse(mse(a, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, data: Vec<u8>) -> Image {
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn tabulated_values() {
        let a = img(1, 1, vec![3, 0, 0]);
        let b = img(1, 1, vec![0, 0, 0]);
        assert_eq!(mse(&a, &b).unwrap(), 3.0);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);

        let a = Image::filled(5, 4, [16, 16, 16]).unwrap();
        let b = Image::filled(5, 4, [0, 0, 0]).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 256.0);
        let p = psnr(&a, &b).unwrap();
        // 20·log10(255/16), evaluated independently.
        assert!((p.db - 24.048_403_955_560_61).abs() < 1e-9 * 24.05);
        assert!(!p.exact);

        let w = Image::filled(3, 3, [255; 3]).unwrap();
        let k = Image::filled(3, 3, [0; 3]).unwrap();
        assert_eq!(psnr(&w, &k).unwrap().db, 0.0);

        assert_eq!(psnr(&a, &a).unwrap(), Psnr { db: PSNR_MAX, exact: true });
    }

    #[test]
    fn size_mismatch() {
        let a = Image::filled(2, 2, [0; 3]).unwrap();
        let b = Image::filled(2, 3, [0; 3]).unwrap();
        assert!(matches!(mse(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn channel_split_equals_single_sum() {
        let a = img(4, 3, (0..36).map(|i| (i * 37 % 256) as u8).collect());
        let b = img(4, 3, (0..36).map(|i| (i * 91 % 256) as u8).collect());
        let mut per_channel = [0u64; 3];
        for (i, (&x, &y)) in a.as_bytes().iter().zip(b.as_bytes()).enumerate() {
            per_channel[i % 3] += ((x as i64 - y as i64).pow(2)) as u64;
        }
        let split = per_channel.iter().sum::<u64>() as f64 / 36.0;
        assert_eq!(split, mse(&a, &b).unwrap());
    }

    #[test]
    fn psnr_decreases_along_mse_ladder() {
        let ladder: Vec<f64> = (1..=50).map(|k| k as f64 * 13.7).collect();
        for w in ladder.windows(2) {
            assert!(psnr_from_mse(w[0]).db > psnr_from_mse(w[1]).db);
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_invariant(
            pairs in proptest::collection::vec((any::<u8>(), any::<u8>()), 3..60),
            rot in 0usize..20,
        ) {
            let n = pairs.len() / 3 * 3;
            let (a, b): (Vec<u8>, Vec<u8>) = pairs[..n].iter().cloned().unzip();
            let ia = img(n / 3, 1, a.clone());
            let ib = img(n / 3, 1, b.clone());
            prop_assert_eq!(psnr(&ia, &ib).unwrap(), psnr(&ib, &ia).unwrap());
            // Permute pixels identically in both images.
            let px = n / 3;
            let r = rot % px;
            let perm = |v: &[u8]| -> Vec<u8> {
                (0..px).flat_map(|i| { let j = (i + r) % px; v[3 * j..3 * j + 3].to_vec() }).collect()
            };
            let pa = img(px, 1, perm(&a));
            let pb = img(px, 1, perm(&b));
            prop_assert_eq!(mse(&ia, &ib).unwrap(), mse(&pa, &pb).unwrap());
        }
    }
}
