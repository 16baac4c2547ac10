/// Gradient-reversal strength at training progress `p` in `[0, 1]`:
/// `2 / (1 + exp(-gamma * p)) - 1`, rising from 0 toward 1.
pub fn grl_schedule(p: f64, gamma: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    2.0 / (1.0 + (-gamma * p).exp()) - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(grl_schedule(0.0, 10.0), 0.0);
        assert!((grl_schedule(0.5, 10.0) - 0.986_614_298_151_430_3).abs() < 1e-12);
        let one = grl_schedule(1.0, 10.0);
        assert!((one - 0.999_909_204_262_595_2).abs() < 1e-12);
        assert!(one < 1.0);
    }

    #[test]
    fn monotone() {
        let mut prev = -1.0;
        for i in 0..=1000 {
            let l = grl_schedule(i as f64 / 1000.0, 10.0);
            assert!(l >= prev);
            prev = l;
        }
    }
}
