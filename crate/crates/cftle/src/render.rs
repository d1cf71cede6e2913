//! Grayscale PGM output.

use cftle_core::ScalarField;

/// Binary PGM (P5, 8-bit), one pixel per node, first row = largest y.
///
/// Values map linearly from `range` (or the valid min..max) onto 0..=255.
/// A degenerate range renders valid nodes as 128. Invalid nodes are 0 and
/// mask pixels are 255.
pub fn render_pgm(field: &ScalarField, range: Option<(f64, f64)>, mask: Option<&[bool]>) -> Vec<u8> {
    let g = &field.grid;
    let (lo, hi) = range.or_else(|| field.range()).unwrap_or((0.0, 0.0));
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    out.reserve(g.len());
    for j in (0..g.ny).rev() {
        for i in 0..g.nx {
            let k = g.index(i, j);
            let v = field.values[k];
            let px = if mask.is_some_and(|m| m[k]) {
                255
            } else if !v.is_finite() {
                0
            } else if !(span > 0.0) {
                128
            } else {
                (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            };
            out.push(px);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cftle_core::{DomainBox, GridSpec};

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(DomainBox::double_gyre(), nx, ny).unwrap()
    }

    fn pixels(img: &[u8]) -> &[u8] {
        let mut newlines = 0;
        let start = img.iter().position(|&b| {
            newlines += (b == b'\n') as usize;
            newlines == 3
        });
        &img[start.unwrap() + 1..]
    }

    #[test]
    fn constant_field_is_mid_gray() {
        let f = ScalarField::from_fn(grid(5, 4), |_| 3.0);
        let img = render_pgm(&f, None, None);
        assert!(img.starts_with(b"P5\n5 4\n255\n"));
        assert!(pixels(&img).iter().all(|&p| p == 128));
    }

    #[test]
    fn orientation_and_scaling() {
        let f = ScalarField::from_fn(grid(3, 3), |p| p.y);
        let px = pixels(&render_pgm(&f, None, None)).to_vec();
        assert_eq!(px, vec![255, 255, 255, 128, 128, 128, 0, 0, 0]);
        let f = ScalarField::from_fn(grid(3, 3), |p| p.x);
        let px = pixels(&render_pgm(&f, Some((0.0, 4.0)), None)).to_vec();
        assert_eq!(&px[..3], &[0, 64, 128]);
    }

    #[test]
    fn mask_and_invalid_pixels() {
        let mut f = ScalarField::from_fn(grid(3, 3), |p| p.x);
        f.values[0] = f64::NAN;
        let mut mask = vec![false; 9];
        mask[8] = true;
        let px = pixels(&render_pgm(&f, None, Some(&mask))).to_vec();
        assert_eq!(px[6], 0);
        assert_eq!(px[2], 255);
    }

    #[test]
    fn size_and_determinism() {
        let f = ScalarField::from_fn(grid(401, 201), |p| (p.x * 3.0).sin() * p.y);
        let a = render_pgm(&f, None, None);
        assert_eq!(a, render_pgm(&f, None, None));
        assert_eq!(pixels(&a).len(), 401 * 201);
    }
}
