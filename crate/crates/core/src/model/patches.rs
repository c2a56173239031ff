use crate::error::{config, contract, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Splits a `C × H × W` image into `N × (P²·C)` patch rows in row-major
/// grid order. Inside a patch the layout is (row, column, channel).
pub fn patchify<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (c, h, w) = chw(image)?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(config(format!("image {h}x{w} not divisible by patch size {patch}")));
    }
    let (gr, gc) = (h / patch, w / patch);
    let pd = patch * patch * c;
    let src = image.data();
    let mut out = vec![T::zero(); gr * gc * pd];
    for r in 0..gr {
        for q in 0..gc {
            let base = (r * gc + q) * pd;
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..c {
                        let y = r * patch + py;
                        let x = q * patch + px;
                        out[base + (py * patch + px) * c + ch] = src[(ch * h + y) * w + x];
                    }
                }
            }
        }
    }
    Tensor::new([gr * gc, pd], out)
}

/// Inverse of [`patchify`] for an `h × w` image; the channel count is
/// inferred from the patch width.
pub fn unpatchify<T: Scalar>(patches: &Tensor<T>, patch: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, pd) = patches.dims2()?;
    if patch == 0 || !h.is_multiple_of(patch) || !w.is_multiple_of(patch) {
        return Err(config(format!("image {h}x{w} not divisible by patch size {patch}")));
    }
    let (gr, gc) = (h / patch, w / patch);
    if n != gr * gc || pd % (patch * patch) != 0 {
        return Err(contract(format!(
            "{n} patches of width {pd} do not tile a {h}x{w} image with patch {patch}"
        )));
    }
    let c = pd / (patch * patch);
    let src = patches.data();
    let mut out = vec![T::zero(); c * h * w];
    for r in 0..gr {
        for q in 0..gc {
            let base = (r * gc + q) * pd;
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..c {
                        let y = r * patch + py;
                        let x = q * patch + px;
                        out[(ch * h + y) * w + x] = src[base + (py * patch + px) * c + ch];
                    }
                }
            }
        }
    }
    Tensor::new([c, h, w], out)
}

pub(crate) fn chw<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(contract(format!("expected a C×H×W image, got shape {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn unit_patches_in_row_major_order() {
        let img = Tensor::<f64>::from_f64([1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let p = patchify(&img, 1).unwrap();
        assert_eq!(p.shape(), &[4, 1]);
        assert_eq!(p.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn constant_image_has_identical_patches() {
        let img = Tensor::<f64>::full([3, 8, 8], 0.25);
        let p = patchify(&img, 4).unwrap();
        for i in 1..4 {
            assert_eq!(p.row(i), p.row(0));
        }
    }

    #[test]
    fn random_3x32x16_round_trip() {
        let mut rng = stream(3, Purpose::Test, 0);
        let data: Vec<f32> = (0..3 * 32 * 16).map(|_| rng.random()).collect();
        let img = Tensor::new([3, 32, 16], data).unwrap();
        let p = patchify(&img, 8).unwrap();
        assert_eq!(p.shape(), &[8, 192]);
        assert_eq!(unpatchify(&p, 8, 32, 16).unwrap(), img);
    }

    #[test]
    fn indivisible_is_config_error() {
        let img = Tensor::<f32>::zeros([1, 10, 8]);
        assert!(matches!(patchify(&img, 4), Err(crate::Error::Config(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(c in 1usize..4, gr in 1usize..4, gc in 1usize..4, p in 1usize..5, seed in any::<u64>()) {
            let (h, w) = (gr * p, gc * p);
            let mut rng = stream(seed, Purpose::Test, 0);
            let data: Vec<f64> = (0..c * h * w).map(|_| rng.random()).collect();
            let img = Tensor::new([c, h, w], data).unwrap();
            let back = unpatchify(&patchify(&img, p).unwrap(), p, h, w).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
