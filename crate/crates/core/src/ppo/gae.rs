/// GAE(γ, λ) over one contiguous trajectory segment.
///
/// `dones[t]` marks the last step of an episode. At such a step the
/// recursion is cut and `bootstrap[t]` stands in for the next value: the
/// critic's estimate of the final state after a truncation, zero after a
/// true termination. `last_value` is V of the state following the final
/// step when the segment ends mid-episode.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n && bootstrap.len() == n);
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let (next_value, next_adv) = if dones[t] {
            (bootstrap[t], 0.0)
        } else if t + 1 < n {
            (values[t + 1], carry)
        } else {
            (last_value, 0.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        carry = delta + gamma * lambda * next_adv;
        adv[t] = carry;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shift to mean 0 and scale to unit (population) standard deviation.
pub fn normalize(values: &mut [f64]) {
    let n = values.len();
    if n < 2 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt() + 1e-8;
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}
