use super::{GazePoint, GazeSample, ImuFrame, ImuSample};
use crate::error::{Error, Result};

/// Index of the frame whose timestamp is closest to `t`. Equidistant
/// samples go to the earlier frame.
fn nearest_frame(frame_timestamps: &[i64], t: i64) -> usize {
    let after = frame_timestamps.partition_point(|&f| f < t);
    if after == 0 {
        return 0;
    }
    if after == frame_timestamps.len() {
        return after - 1;
    }
    let before = after - 1;
    let d_before = t.abs_diff(frame_timestamps[before]);
    let d_after = frame_timestamps[after].abs_diff(t);
    if d_before <= d_after {
        before
    } else {
        after
    }
}

fn check_frames(frame_timestamps: &[i64]) -> Result<()> {
    if frame_timestamps.is_empty() {
        return Err(Error::NoFrames);
    }
    if frame_timestamps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedTimestamps("frame timestamps"));
    }
    Ok(())
}

/// Assigns every gaze sample to its nearest frame and averages the samples
/// that land on the same frame. Frames that receive no finite sample are
/// reported as `None`.
pub fn align_gaze_to_frames(
    gaze_stream: &[GazeSample],
    frame_timestamps: &[i64],
) -> Result<Vec<Option<GazePoint>>> {
    check_frames(frame_timestamps)?;
    if gaze_stream
        .windows(2)
        .any(|w| w[0].timestamp_ns > w[1].timestamp_ns)
    {
        return Err(Error::UnsortedTimestamps("gaze stream"));
    }

    let mut buckets: Vec<Vec<(f64, f64)>> = vec![Vec::new(); frame_timestamps.len()];
    for s in gaze_stream {
        if !(s.x.is_finite() && s.y.is_finite()) {
            continue;
        }
        buckets[nearest_frame(frame_timestamps, s.timestamp_ns)].push((s.x, s.y));
    }

    Ok(buckets
        .into_iter()
        .map(|mut bucket| {
            if bucket.is_empty() {
                return None;
            }
            // Order-independent sum: samples sharing a timestamp may arrive in any order.
            bucket.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let n = bucket.len() as f64;
            let (sx, sy) = bucket
                .iter()
                .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
            Some(GazePoint::new((sx / n) as f32, (sy / n) as f32))
        })
        .collect())
}

/// Buckets IMU samples to their nearest frame and averages each bucket
/// component-wise. Frames with an empty bucket copy the aggregate of the
/// nearest frame (in time) that has one. An empty stream yields `None`
/// for every frame.
pub fn aggregate_imu_per_frame(
    imu_stream: &[ImuSample],
    frame_timestamps: &[i64],
) -> Result<Vec<Option<ImuFrame>>> {
    check_frames(frame_timestamps)?;
    if imu_stream
        .windows(2)
        .any(|w| w[0].timestamp_ns > w[1].timestamp_ns)
    {
        return Err(Error::UnsortedTimestamps("imu stream"));
    }

    let n = frame_timestamps.len();
    let mut sums = vec![[0.0f64; 6]; n];
    let mut counts = vec![0usize; n];
    for s in imu_stream.iter().filter(|s| s.is_finite()) {
        let k = nearest_frame(frame_timestamps, s.timestamp_ns);
        for (acc, v) in sums[k].iter_mut().zip(s.accel.iter().chain(s.gyro.iter())) {
            *acc += v;
        }
        counts[k] += 1;
    }

    let filled: Vec<usize> = (0..n).filter(|&k| counts[k] > 0).collect();
    if filled.is_empty() {
        return Ok(vec![None; n]);
    }

    let mean = |k: usize| -> ImuFrame {
        let c = counts[k] as f64;
        let mut out = [0.0f32; 6];
        for (o, s) in out.iter_mut().zip(sums[k].iter()) {
            *o = (s / c) as f32;
        }
        out
    };

    Ok((0..n)
        .map(|k| {
            if counts[k] > 0 {
                return Some(mean(k));
            }
            let pos = filled.partition_point(|&f| f < k);
            let donor = match (pos.checked_sub(1).map(|p| filled[p]), filled.get(pos)) {
                (Some(b), Some(&a)) => {
                    let db = frame_timestamps[k].abs_diff(frame_timestamps[b]);
                    let da = frame_timestamps[a].abs_diff(frame_timestamps[k]);
                    if db <= da {
                        b
                    } else {
                        a
                    }
                }
                (Some(b), None) => b,
                (None, Some(&a)) => a,
                (None, None) => unreachable!("at least one frame has samples"),
            };
            Some(mean(donor))
        })
        .collect())
}
