use serde::{Deserialize, Serialize};

use crate::bands::Group;
use crate::error::{Error, Result};

fn check_lengths(y: &[f64], yhat: &[f64], min: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Data(format!(
            "{} actuals but {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.len() < min {
        return Err(Error::Data(format!(
            "need at least {min} observations, got {}",
            y.len()
        )));
    }
    Ok(())
}

/// `1 − Σ(y−ŷ)² / Σ(y−ȳ)²`
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::Data(
            "R² is undefined when the actuals have zero variance".into(),
        ));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, p)| (a - p).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCell {
    pub group: Group,
    pub n: usize,
    /// Group means after rescaling each series to population mean 1.
    pub mean_predicted: f64,
    pub mean_actual: f64,
    /// `None` when the group's actual mean is zero.
    pub pr: Option<f64>,
}

/// Predictive ratios for every populated (sex, band) cell, in
/// [`Group::all`] order.
pub fn predictive_ratios(
    predicted: &[f64],
    actual: &[f64],
    groups: &[Group],
) -> Result<Vec<PrCell>> {
    check_lengths(actual, predicted, 1)?;
    if groups.len() != actual.len() {
        return Err(Error::Data(format!(
            "{} group labels for {} patients",
            groups.len(),
            actual.len()
        )));
    }
    let n = actual.len() as f64;
    let pred_mean = predicted.iter().sum::<f64>() / n;
    let act_mean = actual.iter().sum::<f64>() / n;
    if !(pred_mean > 0.0) || !(act_mean > 0.0) {
        return Err(Error::Data(format!(
            "predictive ratios need positive population means (predicted {pred_mean}, actual {act_mean})"
        )));
    }
    let mut sums = std::collections::BTreeMap::<Group, (usize, f64, f64)>::new();
    for ((g, p), a) in groups.iter().zip(predicted).zip(actual) {
        let e = sums.entry(*g).or_default();
        e.0 += 1;
        e.1 += p / pred_mean;
        e.2 += a / act_mean;
    }
    Ok(Group::all()
        .filter_map(|g| {
            let &(count, sp, sa) = sums.get(&g)?;
            let mp = sp / count as f64;
            let ma = sa / count as f64;
            Some(PrCell {
                group: g,
                n: count,
                mean_predicted: mp,
                mean_actual: ma,
                pr: (ma != 0.0).then(|| mp / ma),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::AgeBand;
    use crate::claims::Sex;

    #[test]
    fn r2_examples() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!(r_squared(&[2.0, 2.0], &[1.0, 3.0]).is_err());
        assert!(r_squared(&[2.0], &[2.0]).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn two_group_example() {
        let a = Group {
            sex: Sex::Male,
            band: AgeBand::from_age(30),
        };
        let b = Group {
            sex: Sex::Female,
            band: AgeBand::from_age(30),
        };
        let cells = predictive_ratios(&[1.2, 0.8], &[1.0, 1.0], &[a, b]).unwrap();
        assert_eq!(cells.len(), 2);
        assert!((cells[0].pr.unwrap() - 1.2).abs() < 1e-15);
        assert!((cells[1].pr.unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_actual_cell_is_undefined() {
        let a = Group::new(Sex::Male, 3);
        let b = Group::new(Sex::Male, 50);
        let cells = predictive_ratios(&[1.0, 1.0], &[0.0, 2.0], &[a, b]).unwrap();
        assert_eq!(cells[0].pr, None);
        assert_eq!(cells[1].pr, Some(0.5));
    }
}
