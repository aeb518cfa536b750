use super::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};

/// Rotates a square image clockwise by `quarter_turns * 90°`. Pixel `(r, c)`
/// moves to `(c, n-1-r)` per quarter turn; channels travel with their pixel.
pub fn rotate_image(input: &[f64], shape: ImageShape, quarter_turns: u32) -> Result<Vec<f64>> {
    if !shape.is_square() || shape.len() != input.len() {
        return Err(Error::invalid(format!(
            "rotation needs a square image, got {shape:?} for {} values",
            input.len()
        )));
    }
    let n = shape.rows;
    let ch = shape.channels;
    let mut cur = input.to_vec();
    for _ in 0..quarter_turns % 4 {
        let mut next = vec![0.0; cur.len()];
        for r in 0..n {
            for c in 0..n {
                let (nr, nc) = (c, n - 1 - r);
                for k in 0..ch {
                    next[(nr * n + nc) * ch + k] = cur[(r * n + c) * ch + k];
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Builds a new class from every image of `source_class` rotated by
/// `degrees` (90, 180 or 270). The new class id is one past the largest
/// existing label.
pub fn rotate_class_synthesis(ds: &Dataset, source_class: usize, degrees: u32) -> Result<Dataset> {
    let turns = match degrees {
        90 => 1,
        180 => 2,
        270 => 3,
        other => return Err(Error::invalid(format!("unsupported rotation {other}°; use 90, 180 or 270"))),
    };
    let shape = ds
        .image()
        .ok_or_else(|| Error::invalid("rotated-class synthesis requires image data"))?;
    let fresh = ds.classes().last().map_or(0, |&c| c + 1);
    let samples = ds
        .samples()
        .iter()
        .filter(|s| s.label == source_class)
        .map(|s| {
            Ok(Sample {
                input: rotate_image(&s.input, shape, turns)?,
                label: fresh,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::EmptyClass(source_class));
    }
    Dataset::new(samples, Some(shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQ: ImageShape = ImageShape { rows: 3, cols: 3, channels: 1 };

    #[test]
    fn single_pixel_moves_to_rotated_coordinate() {
        let mut img = vec![0.0; 9];
        img[1] = 1.0; // (0, 1)
        let out = rotate_image(&img, SQ, 1).unwrap();
        // (r, c) = (0, 1) -> (1, 2)
        assert_eq!(out[5], 1.0);
        assert_eq!(out.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn half_turn_twice_is_identity() {
        let img: Vec<f64> = (0..9).map(f64::from).collect();
        let once = rotate_image(&img, SQ, 2).unwrap();
        assert_ne!(once, img);
        assert_eq!(rotate_image(&once, SQ, 2).unwrap(), img);
        assert_eq!(rotate_image(&img, SQ, 4).unwrap(), img);
    }

    #[test]
    fn multi_channel_pixels_move_together() {
        let shape = ImageShape { rows: 2, cols: 2, channels: 2 };
        let img = vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
        let out = rotate_image(&img, shape, 1).unwrap();
        // (0,0)->(0,1), (0,1)->(1,1), (1,0)->(0,0), (1,1)->(1,0)
        assert_eq!(out, vec![3.0, 30.0, 1.0, 10.0, 4.0, 40.0, 2.0, 20.0]);
    }

    #[test]
    fn synthesized_class_is_fresh() {
        let samples = (0..6)
            .map(|i| Sample {
                input: (0..9).map(|p| f64::from(p * i) / 50.0).collect(),
                label: (i % 3) as usize,
            })
            .collect();
        let ds = Dataset::new(samples, Some(SQ)).unwrap();
        let rot = rotate_class_synthesis(&ds, 1, 90).unwrap();
        assert_eq!(rot.len(), 2);
        assert!(rot.labels().iter().all(|&l| l == 3));
        assert!(!ds.classes().contains(&3));
        assert!(rotate_class_synthesis(&ds, 1, 45).is_err());
        assert!(rotate_class_synthesis(&ds, 9, 90).is_err());
        let vec_ds = Dataset::new(vec![Sample { input: vec![0.0; 9], label: 0 }], None).unwrap();
        assert!(rotate_class_synthesis(&vec_ds, 0, 90).is_err());
    }
}
