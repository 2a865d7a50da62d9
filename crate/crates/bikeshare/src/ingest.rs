//! Trip-record ingestion: delimited trip logs in, binned arrival-rate
//! profiles, travel-duration statistics, and fitted sinusoidal demand out.
//!
//! Column names, time formats, and the timezone label are configured through
//! [`TripSchema`]; [`TripSchema::citibike`] covers the public Citi Bike
//! export. Timestamps are treated as wall-clock times in the declared zone;
//! all downstream binning is wall-clock arithmetic.

use std::path::Path;

use chrono::{Datelike, NaiveDateTime};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("required column {0:?} not found in header")]
    MissingColumn(String),
    #[error("no trips to process")]
    EmptyInput,
    #[error("bin width {0}s must be positive and divide a week when folding")]
    BadBinWidth(u32),
    #[error("angular frequency must be positive, got {0}")]
    BadFrequency(f64),
}

/// Column mapping and parsing configuration for one trip-log layout.
#[derive(Debug, Clone)]
pub struct TripSchema {
    pub start_time: String,
    pub end_time: String,
    /// Trip duration in seconds; computed from the timestamps when absent.
    pub duration: Option<String>,
    pub start_station: String,
    pub end_station: String,
    /// Tried in order when parsing timestamps; the first is used for output.
    pub time_formats: Vec<String>,
    /// Label only: timestamps are kept as wall-clock in this zone.
    pub timezone: String,
}

impl TripSchema {
    /// The public Citi Bike trip-data layout (2015 era).
    pub fn citibike() -> Self {
        Self {
            start_time: "starttime".into(),
            end_time: "stoptime".into(),
            duration: Some("tripduration".into()),
            start_station: "start station id".into(),
            end_station: "end station id".into(),
            time_formats: vec![
                "%m/%d/%Y %H:%M:%S".into(),
                "%m/%d/%Y %H:%M".into(),
                "%Y-%m-%d %H:%M:%S".into(),
            ],
            timezone: "America/New_York".into(),
        }
    }

    fn parse_time(&self, raw: &str) -> Option<NaiveDateTime> {
        self.time_formats
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(raw.trim(), f).ok())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub start_time: NaiveDateTime,
    pub end_time: NaiveDateTime,
    pub duration_secs: f64,
    pub start_station: String,
    pub end_station: String,
}

/// Parse result: well-formed records plus the count of skipped rows.
#[derive(Debug, Clone)]
pub struct ParsedTrips {
    pub records: Vec<TripRecord>,
    pub skipped: usize,
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

/// Read a delimited trip log. Malformed rows (bad fields, end before start,
/// duration disagreeing with the timestamps by more than a second) are
/// counted and skipped, never fatal.
pub fn parse_trips(path: &Path, schema: &TripSchema) -> Result<ParsedTrips, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let start_idx = header_index(&headers, &schema.start_time)?;
    let end_idx = header_index(&headers, &schema.end_time)?;
    let duration_idx = schema
        .duration
        .as_ref()
        .map(|name| header_index(&headers, name))
        .transpose()?;
    let start_station_idx = header_index(&headers, &schema.start_station)?;
    let end_station_idx = header_index(&headers, &schema.end_station)?;

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for row in reader.records() {
        let Ok(row) = row else {
            skipped += 1;
            continue;
        };
        let parsed = (|| {
            let start_time = schema.parse_time(row.get(start_idx)?)?;
            let end_time = schema.parse_time(row.get(end_idx)?)?;
            if end_time < start_time {
                return None;
            }
            let elapsed = (end_time - start_time).num_seconds() as f64;
            let duration_secs = match duration_idx {
                Some(idx) => {
                    let d: f64 = row.get(idx)?.trim().parse().ok()?;
                    if (d - elapsed).abs() > 1.0 {
                        return None;
                    }
                    d
                }
                None => elapsed,
            };
            Some(TripRecord {
                start_time,
                end_time,
                duration_secs,
                start_station: row.get(start_station_idx)?.trim().to_string(),
                end_station: row.get(end_station_idx)?.trim().to_string(),
            })
        })();
        match parsed {
            Some(record) => records.push(record),
            None => skipped += 1,
        }
    }
    Ok(ParsedTrips { records, skipped })
}

/// Write records back out in the schema's layout (first time format).
pub fn write_trips(
    path: &Path,
    records: &[TripRecord],
    schema: &TripSchema,
) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![schema.start_time.clone(), schema.end_time.clone()];
    if let Some(d) = &schema.duration {
        header.push(d.clone());
    }
    header.push(schema.start_station.clone());
    header.push(schema.end_station.clone());
    writer.write_record(&header)?;
    let fmt = &schema.time_formats[0];
    for r in records {
        let mut row = vec![
            r.start_time.format(fmt).to_string(),
            r.end_time.format(fmt).to_string(),
        ];
        if schema.duration.is_some() {
            row.push(format!("{}", r.duration_secs));
        }
        row.push(r.start_station.clone());
        row.push(r.end_station.clone());
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

const WEEK_SECONDS: i64 = 7 * 24 * 3600;

/// Per-bin trip start and end counts. When folded, bins span one week from
/// Monday 00:00 and hold averages across the calendar weeks in the data.
#[derive(Debug, Clone)]
pub struct BinnedRates {
    pub bin_seconds: u32,
    pub folded: bool,
    /// Wall-clock time of bin 0.
    pub origin: NaiveDateTime,
    pub starts: Vec<f64>,
    pub ends: Vec<f64>,
}

impl BinnedRates {
    /// Midpoint of bin `i` in seconds from the origin.
    pub fn bin_midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_seconds as f64
    }
}

fn epoch_seconds(t: NaiveDateTime) -> i64 {
    t.and_utc().timestamp()
}

/// Count trip starts and ends per time bin. With `fold_weeks`, counts are
/// keyed by weekday and time of day and averaged uniformly over the calendar
/// weeks the data spans.
pub fn binned_rates(
    trips: &[TripRecord],
    bin_seconds: u32,
    fold_weeks: bool,
) -> Result<BinnedRates, IngestError> {
    if trips.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    if bin_seconds == 0 || (fold_weeks && WEEK_SECONDS % bin_seconds as i64 != 0) {
        return Err(IngestError::BadBinWidth(bin_seconds));
    }
    let bin = bin_seconds as i64;
    let earliest = trips.iter().map(|t| t.start_time).min().expect("non-empty");
    let latest = trips
        .iter()
        .map(|t| t.end_time.max(t.start_time))
        .max()
        .expect("non-empty");

    // Folded: Monday 00:00 of the first week; unfolded: midnight of the
    // first day, so bin offsets read as time of day.
    let origin = if fold_weeks {
        let days_back = earliest.weekday().num_days_from_monday() as i64;
        (earliest.date() - chrono::Duration::days(days_back))
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
    } else {
        earliest
            .date()
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
    };
    let origin_secs = epoch_seconds(origin);

    let (bin_count, weeks) = if fold_weeks {
        let span = epoch_seconds(latest) - origin_secs;
        let weeks = ((span as f64) / WEEK_SECONDS as f64).ceil().max(1.0);
        ((WEEK_SECONDS / bin) as usize, weeks)
    } else {
        let last = (epoch_seconds(latest) - origin_secs) / bin;
        (last as usize + 1, 1.0)
    };

    let mut starts = vec![0.0; bin_count];
    let mut ends = vec![0.0; bin_count];
    let slot = |t: NaiveDateTime| -> usize {
        let offset = epoch_seconds(t) - origin_secs;
        let offset = if fold_weeks {
            offset.rem_euclid(WEEK_SECONDS)
        } else {
            offset
        };
        (offset / bin) as usize
    };
    for trip in trips {
        starts[slot(trip.start_time)] += 1.0;
        ends[slot(trip.end_time)] += 1.0;
    }
    if weeks > 1.0 {
        for v in starts.iter_mut().chain(ends.iter_mut()) {
            *v /= weeks;
        }
    }
    Ok(BinnedRates {
        bin_seconds,
        folded: fold_weeks,
        origin,
        starts,
        ends,
    })
}

/// Sample statistics of trip durations.
#[derive(Debug, Clone)]
pub struct DurationStats {
    pub count: usize,
    pub mean_secs: f64,
    pub median_secs: f64,
    pub std_dev_secs: f64,
    /// `μ = 1/mean`, the exponential travel-rate estimate (per second).
    pub travel_rate_estimate: f64,
    /// `(lower_edge_secs, count)` pairs.
    pub histogram: Vec<(f64, u64)>,
}

pub fn duration_stats(
    trips: &[TripRecord],
    histogram_bin_secs: f64,
) -> Result<DurationStats, IngestError> {
    if trips.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut durations: Vec<f64> = trips.iter().map(|t| t.duration_secs).collect();
    durations.sort_by(f64::total_cmp);
    let n = durations.len();
    let mean = durations.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        durations[n / 2]
    } else {
        0.5 * (durations[n / 2 - 1] + durations[n / 2])
    };
    let variance = if n > 1 {
        durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };

    let max = *durations.last().expect("non-empty");
    let bins = (max / histogram_bin_secs).floor() as usize + 1;
    let mut histogram = vec![0u64; bins];
    for &d in &durations {
        histogram[(d / histogram_bin_secs) as usize] += 1;
    }
    Ok(DurationStats {
        count: n,
        mean_secs: mean,
        median_secs: median,
        std_dev_secs: variance.sqrt(),
        travel_rate_estimate: 1.0 / mean,
        histogram: histogram
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i as f64 * histogram_bin_secs, c))
            .collect(),
    })
}

/// Least-squares fit of `v ≈ base·(1 + amplitude·sin(ω t))` at fixed `ω`.
#[derive(Debug, Clone, Copy)]
pub struct SinusoidFit {
    pub base: f64,
    pub amplitude: f64,
    pub angular_frequency: f64,
    pub residual_norm: f64,
    /// Set when the fitted amplitude was clamped below 1.
    pub clamped: bool,
}

/// Fit base and amplitude of the sinusoidal demand form by linear least
/// squares on the regressors `(1, sin(ω t))`. A fitted `|amplitude| ≥ 1` is
/// clamped just below 1 and flagged.
pub fn fit_sinusoid(
    times: &[f64],
    values: &[f64],
    angular_frequency: f64,
) -> Result<SinusoidFit, IngestError> {
    if times.is_empty() || times.len() != values.len() {
        return Err(IngestError::EmptyInput);
    }
    if angular_frequency <= 0.0 || !angular_frequency.is_finite() {
        return Err(IngestError::BadFrequency(angular_frequency));
    }
    let n = times.len() as f64;
    let mut sum_s = 0.0;
    let mut sum_ss = 0.0;
    let mut sum_v = 0.0;
    let mut sum_sv = 0.0;
    for (&t, &v) in times.iter().zip(values) {
        let s = (angular_frequency * t).sin();
        sum_s += s;
        sum_ss += s * s;
        sum_v += v;
        sum_sv += s * v;
    }
    let det = n * sum_ss - sum_s * sum_s;
    let (base, slope) = if det.abs() < 1e-12 * n.max(1.0) {
        (sum_v / n, 0.0)
    } else {
        (
            (sum_ss * sum_v - sum_s * sum_sv) / det,
            (n * sum_sv - sum_s * sum_v) / det,
        )
    };
    let raw_amplitude = if base.abs() > 0.0 { slope / base } else { 0.0 };
    let clamped = raw_amplitude.abs() >= 1.0;
    let amplitude = if clamped {
        raw_amplitude.signum() * (1.0 - 1e-9)
    } else {
        raw_amplitude
    };
    let residual_norm = times
        .iter()
        .zip(values)
        .map(|(&t, &v)| (v - base - slope * (angular_frequency * t).sin()).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(SinusoidFit {
        base,
        amplitude,
        angular_frequency,
        residual_norm,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn at(day: u32, hour: u32, min: u32, sec: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2015, 6, day)
            .unwrap()
            .and_hms_opt(hour, min, sec)
            .unwrap()
    }

    fn trip(start: NaiveDateTime, duration_secs: i64) -> TripRecord {
        TripRecord {
            start_time: start,
            end_time: start + chrono::Duration::seconds(duration_secs),
            duration_secs: duration_secs as f64,
            start_station: "a".into(),
            end_station: "b".into(),
        }
    }

    fn write_fixture(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_well_formed_rows() {
        let f = write_fixture(
            "tripduration,starttime,stoptime,start station id,end station id\n\
             600,6/1/2015 00:10:00,6/1/2015 00:20:00,72,79\n\
             300,6/1/2015 08:00:00,6/1/2015 08:05:00,79,72\n\
             60,6/2/2015 12:00:00,6/2/2015 12:01:00,72,72\n",
        );
        let parsed = parse_trips(f.path(), &TripSchema::citibike()).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.skipped, 0);
        assert_eq!(parsed.records[0].duration_secs, 600.0);
        assert_eq!(parsed.records[0].start_station, "72");
    }

    #[test]
    fn skips_rows_with_reversed_times() {
        let f = write_fixture(
            "tripduration,starttime,stoptime,start station id,end station id\n\
             600,6/1/2015 01:00:00,6/1/2015 00:00:00,72,79\n\
             600,6/1/2015 00:00:00,6/1/2015 00:10:00,72,79\n",
        );
        let parsed = parse_trips(f.path(), &TripSchema::citibike()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn skips_duration_mismatch() {
        let f = write_fixture(
            "tripduration,starttime,stoptime,start station id,end station id\n\
             100,6/1/2015 00:00:00,6/1/2015 00:10:00,72,79\n",
        );
        let parsed = parse_trips(f.path(), &TripSchema::citibike()).unwrap();
        assert_eq!(parsed.records.len(), 0);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn empty_file_with_header_is_empty() {
        let f = write_fixture("tripduration,starttime,stoptime,start station id,end station id\n");
        let parsed = parse_trips(f.path(), &TripSchema::citibike()).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn missing_column_is_fatal() {
        let f = write_fixture("starttime,stoptime\n6/1/2015 00:00:00,6/1/2015 00:10:00\n");
        assert!(matches!(
            parse_trips(f.path(), &TripSchema::citibike()),
            Err(IngestError::MissingColumn(_))
        ));
    }

    #[test]
    fn round_trips_through_emit() {
        let records = vec![
            trip(at(1, 0, 10, 0), 600),
            trip(at(2, 8, 0, 30), 345),
            trip(at(3, 23, 59, 59), 61),
        ];
        let schema = TripSchema::citibike();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_trips(f.path(), &records, &schema).unwrap();
        let parsed = parse_trips(f.path(), &schema).unwrap();
        assert_eq!(parsed.skipped, 0);
        assert_eq!(parsed.records, records);
    }

    #[test]
    fn single_trip_hits_one_start_and_one_end_bin() {
        let trips = vec![trip(at(1, 0, 7, 0), 600)];
        let bins = binned_rates(&trips, 300, false).unwrap();
        assert_eq!(bins.starts.iter().sum::<f64>(), 1.0);
        assert_eq!(bins.ends.iter().sum::<f64>(), 1.0);
        assert_eq!(bins.starts.iter().filter(|&&v| v > 0.0).count(), 1);
        assert_eq!(bins.ends.iter().filter(|&&v| v > 0.0).count(), 1);
        // Start at 00:07 falls in the second 5-minute bin, end in the fourth.
        assert_eq!(bins.starts[1], 1.0);
        assert_eq!(bins.ends[3], 1.0);
    }

    #[test]
    fn binning_loses_no_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trips: Vec<TripRecord> = (0..500)
            .map(|_| {
                let start =
                    at(1, 0, 0, 0) + chrono::Duration::seconds(rng.random_range(0..14 * 86_400));
                trip(start, rng.random_range(60..3_600))
            })
            .collect();
        let bins = binned_rates(&trips, 300, false).unwrap();
        assert_eq!(bins.starts.iter().sum::<f64>(), 500.0);
        assert_eq!(bins.ends.iter().sum::<f64>(), 500.0);
    }

    #[test]
    fn folding_two_identical_weeks_matches_one() {
        // June 1st 2015 is a Monday.
        let week1: Vec<TripRecord> = (0..50)
            .map(|i| trip(at(1, 0, 0, 0) + chrono::Duration::hours(3 * i), 120))
            .collect();
        let week2: Vec<TripRecord> = week1
            .iter()
            .map(|t| TripRecord {
                start_time: t.start_time + chrono::Duration::days(7),
                end_time: t.end_time + chrono::Duration::days(7),
                ..t.clone()
            })
            .collect();
        let single = binned_rates(&week1, 300, true).unwrap();
        let both: Vec<TripRecord> = week1.iter().chain(&week2).cloned().collect();
        let double = binned_rates(&both, 300, true).unwrap();
        assert_eq!(single.starts, double.starts);
        assert_eq!(single.ends, double.ends);
    }

    #[test]
    fn homogeneous_poisson_rate_recovered() {
        // 12 trips/hour over 1000 hours: the mean 5-minute bin holds 1.0.
        let rate_per_sec = 12.0 / 3600.0;
        let horizon_secs = 1000.0 * 3600.0;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut t = 0.0f64;
        let mut trips = Vec::new();
        loop {
            t += -rng.random::<f64>().max(f64::MIN_POSITIVE).ln() / rate_per_sec;
            if t >= horizon_secs {
                break;
            }
            trips.push(trip(
                at(1, 0, 0, 0) + chrono::Duration::seconds(t as i64),
                300,
            ));
        }
        let bins = binned_rates(&trips, 300, false).unwrap();
        let n_bins = bins.starts.len() as f64;
        let mean = bins.starts.iter().sum::<f64>() / n_bins;
        // 3σ of the per-bin mean of Poisson(1) counts.
        let tol = 3.0 * (1.0 / n_bins).sqrt();
        assert!((mean - 1.0).abs() <= tol, "mean {mean}, tol {tol}");
    }

    #[test]
    fn duration_stats_constant_sample() {
        let trips = vec![
            trip(at(1, 0, 0, 0), 600),
            trip(at(1, 1, 0, 0), 600),
            trip(at(1, 2, 0, 0), 600),
        ];
        let stats = duration_stats(&trips, 60.0).unwrap();
        assert_eq!(stats.mean_secs, 600.0);
        assert_eq!(stats.median_secs, 600.0);
        assert_eq!(stats.std_dev_secs, 0.0);
        assert!((stats.travel_rate_estimate - 1.0 / 600.0).abs() < 1e-15);
        assert_eq!(stats.histogram.iter().map(|&(_, c)| c).sum::<u64>(), 3);
    }

    #[test]
    fn duration_stats_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut trips: Vec<TripRecord> = (0..200)
            .map(|i| {
                trip(
                    at(1, 0, 0, 0) + chrono::Duration::minutes(i),
                    rng.random_range(60..2000),
                )
            })
            .collect();
        let a = duration_stats(&trips, 60.0).unwrap();
        trips.reverse();
        trips.swap(3, 150);
        let b = duration_stats(&trips, 60.0).unwrap();
        assert_eq!(a.mean_secs, b.mean_secs);
        assert_eq!(a.median_secs, b.median_secs);
        assert_eq!(a.std_dev_secs, b.std_dev_secs);
        assert_eq!(a.histogram, b.histogram);
    }

    #[test]
    fn lognormal_durations_mean_exceeds_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let trips: Vec<TripRecord> = (0..2000)
            .map(|i| {
                // Box-Muller; exp(N(6.3, 0.7²)) seconds, roughly Citi-Bike-like.
                let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.random();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                let secs = (6.3 + 0.7 * z).exp();
                trip(at(1, 0, 0, 0) + chrono::Duration::minutes(i), secs as i64)
            })
            .collect();
        let stats = duration_stats(&trips, 60.0).unwrap();
        assert!(stats.mean_secs > stats.median_secs);
    }

    #[test]
    fn sinusoid_fit_recovers_exact_profile() {
        let times: Vec<f64> = (0..1000).map(|i| i as f64 * 0.05).collect();
        let values: Vec<f64> = times.iter().map(|&t| 1.0 + 0.5 * (t / 2.0).sin()).collect();
        let fit = fit_sinusoid(&times, &values, 0.5).unwrap();
        assert!((fit.base - 1.0).abs() < 1e-9, "base {}", fit.base);
        assert!((fit.amplitude - 0.5).abs() < 1e-9, "amp {}", fit.amplitude);
        assert!(fit.residual_norm < 1e-9);
        assert!(!fit.clamped);
    }

    #[test]
    fn sinusoid_fit_constant_profile() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let values = vec![2.0; 100];
        let fit = fit_sinusoid(&times, &values, 0.5).unwrap();
        assert!((fit.base - 2.0).abs() < 1e-12);
        assert_eq!(fit.amplitude, 0.0);
    }

    #[test]
    fn sinusoid_fit_with_noise_stays_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let times: Vec<f64> = (0..2000).map(|i| i as f64 * 0.05).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|&t| {
                let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.random();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                1.0 + 0.5 * (t / 2.0).sin() + 0.05 * z
            })
            .collect();
        let fit = fit_sinusoid(&times, &values, 0.5).unwrap();
        assert!((fit.base - 1.0).abs() < 0.02);
        assert!((fit.amplitude - 0.5).abs() < 0.02);
    }

    #[test]
    fn sinusoid_fit_clamps_overdriven_amplitude() {
        let times: Vec<f64> = (0..500).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|&t| 1.0 + 3.0 * (t / 2.0).sin()).collect();
        let fit = fit_sinusoid(&times, &values, 0.5).unwrap();
        assert!(fit.clamped);
        assert!(fit.amplitude < 1.0);
    }
}
