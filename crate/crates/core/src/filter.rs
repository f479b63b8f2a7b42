//! Separable Gaussian filtering on single-channel float planes.

/// Normalized 1-D Gaussian taps of the given odd `width`.
pub fn gaussian_kernel(width: usize, sigma: f64) -> Vec<f32> {
    assert!(width % 2 == 1, "kernel width must be odd");
    if width == 1 || sigma <= 0.0 {
        let mut k = vec![0f32; width];
        k[width / 2] = 1.0;
        return k;
    }
    let r = (width / 2) as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / sum) as f32).collect()
}

/// Kernel width covering ±3σ, always odd.
pub fn support_for_sigma(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil().max(1.0) as usize + 1
}

/// Mirror index without duplicating the edge sample (`-1 → 1`).
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as i64;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable convolution of a `width × height` plane with reflect padding.
pub fn convolve_separable(plane: &[f32], width: usize, height: usize, kernel: &[f32]) -> Vec<f32> {
    if kernel.len() == 1 {
        return plane.iter().map(|v| v * kernel[0]).collect();
    }
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0f32; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0f32;
            for (k, &w) in kernel.iter().enumerate() {
                acc += w * row[reflect(x as i64 + k as i64 - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0f32; plane.len()];
    for y in 0..height {
        for (k, &w) in kernel.iter().enumerate() {
            let sy = reflect(y as i64 + k as i64 - r, height);
            let src = &tmp[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

pub fn gaussian_blur(plane: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    let kernel = gaussian_kernel(support_for_sigma(sigma), sigma);
    convolve_separable(plane, width, height, &kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let got: Vec<_> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-4, 1), 0);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(5, 1.0);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(k[0], k[4]);
        assert_eq!(k[1], k[3]);
        assert!(k[2] > k[1]);
    }

    #[test]
    fn blur_keeps_constants() {
        let plane = vec![0.25f32; 6 * 4];
        let out = convolve_separable(&plane, 6, 4, &gaussian_kernel(5, 1.0));
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }
}
