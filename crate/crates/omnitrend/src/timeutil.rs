//! UTC time helpers shared by the generator and the feature encoders.

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Hour of day in UTC, 0..24.
pub fn hour_of_day(timestamp: i64) -> u32 {
    (timestamp.rem_euclid(SECONDS_PER_DAY) / 3600) as u32
}

/// Weekday in UTC with 0 = Monday. The epoch (1970-01-01) was a Thursday.
pub fn weekday(timestamp: i64) -> u32 {
    ((timestamp.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7)) as u32
}
