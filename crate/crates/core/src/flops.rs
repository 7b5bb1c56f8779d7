//! Multiply-accumulate accounting.

/// MACs of a convolution producing `out_c × oh × ow` values from
/// `in_per_group` input channels with a `kh × kw` kernel.
pub const fn conv_macs(out_c: usize, oh: usize, ow: usize, in_per_group: usize, kh: usize, kw: usize) -> u64 {
    (out_c * oh * ow * in_per_group * kh * kw) as u64
}

/// Exact MAC count of one multi-scale focused attention block over a
/// `channels × h × w` input with separable branches of the given tap counts.
///
/// Each depthwise `k`-tap pass costs `C·h·w·k`, the `1×1` mix over the
/// identity plus branch outputs costs `(branches + 1)·C·C·h·w` and the gate
/// multiply `C·h·w`.
pub fn msfa_flops(channels: usize, h: usize, w: usize, kernels: &[usize]) -> u64 {
    let plane = (channels * h * w) as u64;
    let taps: u64 = kernels.iter().map(|&k| 2 * k as u64).sum();
    let mix = (kernels.len() as u64 + 1) * channels as u64 * plane;
    plane * taps + mix + plane
}
