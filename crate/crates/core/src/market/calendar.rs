use super::DataError;
use chrono::{DateTime, FixedOffset, NaiveDate, NaiveTime, TimeZone};

/// Local close time and the fixed UTC offset of the exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarketClock {
    pub close: NaiveTime,
    pub utc_offset: FixedOffset,
}

impl Default for MarketClock {
    /// Hong Kong: 16:00 at GMT+8.
    fn default() -> Self {
        MarketClock {
            close: NaiveTime::from_hms_opt(16, 0, 0).unwrap(),
            utc_offset: FixedOffset::east_opt(8 * 3600).unwrap(),
        }
    }
}

/// Ordered trading dates plus the market clock used to assign posts to days.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
    clock: MarketClock,
}

impl TradingCalendar {
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self, DataError> {
        Self::with_clock(dates, MarketClock::default())
    }

    pub fn with_clock(dates: Vec<NaiveDate>, clock: MarketClock) -> Result<Self, DataError> {
        if dates.is_empty() {
            return Err(DataError::EmptyCalendar);
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(DataError::UnorderedCalendar(w[1]));
        }
        Ok(TradingCalendar { dates, clock })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn clock(&self) -> MarketClock {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn first(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn last(&self) -> NaiveDate {
        self.dates[self.dates.len() - 1]
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.dates.binary_search(&date).is_ok()
    }

    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// First trading date strictly after `date`.
    pub fn next_after(&self, date: NaiveDate) -> Option<NaiveDate> {
        let i = self.dates.partition_point(|d| *d <= date);
        self.dates.get(i).copied()
    }

    /// Trading date preceding a trading date, `None` for the first one.
    pub fn previous(&self, date: NaiveDate) -> Result<Option<NaiveDate>, DataError> {
        let i = self.position(date).ok_or(DataError::NotTradingDate(date))?;
        Ok(i.checked_sub(1).map(|j| self.dates[j]))
    }

    /// Trading day a timestamp counts towards.
    ///
    /// Before the close on a trading day the post belongs to that day. At or
    /// after the close, or on a non-trading day, it belongs to the next trading
    /// day strictly after its local date.
    pub fn effective_trading_date<Tz: TimeZone>(&self, timestamp: &DateTime<Tz>) -> Result<NaiveDate, DataError> {
        let local = timestamp.with_timezone(&self.clock.utc_offset).naive_local();
        let (day, time) = (local.date(), local.time());
        if time < self.clock.close && self.contains(day) {
            return Ok(day);
        }
        self.next_after(day).ok_or(DataError::OutOfRange(day))
    }
}
