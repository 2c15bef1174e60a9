//! Mixed-radix indexing of joint actions, first agent most significant.

use crate::error::{Error, Result};

pub fn joint_action_index(tuple: &[usize], arities: &[usize]) -> Result<usize> {
    if tuple.len() != arities.len() {
        return Err(Error::dims("joint action tuple", arities.len(), tuple.len()));
    }
    let mut flat = 0usize;
    for (&a, &n) in tuple.iter().zip(arities) {
        if a >= n {
            return Err(Error::LabelOutOfRange { label: a, len: n });
        }
        flat = flat
            .checked_mul(n)
            .and_then(|f| f.checked_add(a))
            .ok_or_else(|| Error::InvalidArgument("joint action space overflows usize".into()))?;
    }
    Ok(flat)
}

pub fn joint_action_tuple(mut flat: usize, arities: &[usize]) -> Result<Vec<usize>> {
    let total = joint_action_count(arities)?;
    if flat >= total {
        return Err(Error::LabelOutOfRange { label: flat, len: total });
    }
    let mut tuple = vec![0; arities.len()];
    for (slot, &n) in tuple.iter_mut().zip(arities).rev() {
        *slot = flat % n;
        flat /= n;
    }
    Ok(tuple)
}

pub fn joint_action_count(arities: &[usize]) -> Result<usize> {
    arities
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::InvalidArgument("joint action space overflows usize".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(joint_action_index(&[0, 0, 0], &[5, 5, 5]).unwrap(), 0);
        assert_eq!(joint_action_index(&[2, 3], &[5, 5]).unwrap(), 13);
        assert_eq!(joint_action_tuple(13, &[5, 5]).unwrap(), vec![2, 3]);
        assert!(joint_action_index(&[5, 0], &[5, 5]).is_err());
        assert!(joint_action_tuple(25, &[5, 5]).is_err());
    }

    #[test]
    fn exhaustive_round_trip() {
        let ar = [5, 5, 5];
        let mut seen = 0;
        for a in 0..5 {
            for b in 0..5 {
                for c in 0..5 {
                    let f = joint_action_index(&[a, b, c], &ar).unwrap();
                    assert_eq!(f, seen);
                    assert_eq!(joint_action_tuple(f, &ar).unwrap(), vec![a, b, c]);
                    seen += 1;
                }
            }
        }
        assert_eq!(seen, joint_action_count(&ar).unwrap());
    }
}
