//! Small numeric helpers shared by the batch and deadline math.

/// Relative distance below which a value is treated as the integer it rounds to.
pub const INTEGER_SNAP: f64 = 1e-9;

/// Ceiling that ignores floating-point noise around exact integers.
///
/// `ceil_snapped(11.000000000000002) == 11`. Values whose distance to the
/// nearest integer is within `INTEGER_SNAP * max(1, |x|)` snap to it.
pub fn ceil_snapped(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= INTEGER_SNAP * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// Lower median: for even-length input the smaller of the two middle values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Population coefficient of variation. Zero for fewer than two values or a zero mean.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapped_ceiling() {
        assert_eq!(ceil_snapped(11.000000000000002), 11.0);
        assert_eq!(ceil_snapped(10.5), 11.0);
        assert_eq!(ceil_snapped(3.0), 3.0);
        assert_eq!(ceil_snapped(3.000001), 4.0);
        assert_eq!(ceil_snapped(0.2), 1.0);
    }

    #[test]
    fn lower_median_even_and_odd() {
        assert_eq!(lower_median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn cv_of_constant_is_zero() {
        assert_eq!(coefficient_of_variation(&[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(coefficient_of_variation(&[5.0]), 0.0);
        let cv = coefficient_of_variation(&[1.0, 3.0]);
        assert!((cv - 0.5).abs() < 1e-12);
    }
}
