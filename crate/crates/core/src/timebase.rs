//! Grouping of regularly sampled items (frames, latent columns) into seconds.

use std::ops::Range;

/// Items whose center time `(i + 0.5) / rate` falls in `[s, s + 1)`, for each second `s`.
///
/// Complete seconds are always kept; a trailing partial second is kept only when it holds
/// at least `rate / 2` items.
pub fn second_buckets(len: usize, rate: f64) -> Vec<Range<usize>> {
    assert!(rate > 0.0, "rate must be positive");
    let duration = len as f64 / rate;
    let mut out = Vec::new();
    let mut start = 0;
    let mut s = 0usize;
    while start < len {
        let mut end = start;
        while end < len && ((end as f64 + 0.5) / rate) < (s + 1) as f64 {
            end += 1;
        }
        let complete = duration >= (s + 1) as f64;
        if complete || (end - start) as f64 >= rate / 2.0 {
            out.push(start..end);
        }
        start = end;
        s += 1;
    }
    out
}

/// Number of seconds [`second_buckets`] yields for `len` items.
pub fn seconds_for(len: usize, rate: f64) -> usize {
    second_buckets(len, rate).len()
}
