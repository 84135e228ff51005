use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Cursor};
use std::path::Path;

use serde::Deserialize;

use super::{ParseReport, RawDataset, RawRating};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Business {
    business_id: Option<String>,
    state: Option<String>,
    categories: Option<String>,
}

#[derive(Deserialize)]
struct Review {
    user_id: Option<String>,
    business_id: Option<String>,
    stars: Option<f64>,
    date: Option<String>,
}

/// Reads newline-delimited Yelp review and business dumps, keeping only
/// reviews of businesses located in `state_filter`.
pub fn parse_yelp(review_path: &Path, business_path: &Path, state_filter: &str) -> Result<RawDataset> {
    let business = File::open(business_path).map_err(|e| Error::io(business_path, e))?;
    let review = File::open(review_path).map_err(|e| Error::io(review_path, e))?;
    parse_yelp_readers(
        BufReader::new(review),
        BufReader::new(business),
        state_filter,
    )
}

pub fn parse_yelp_str(reviews: &str, businesses: &str, state_filter: &str) -> Result<RawDataset> {
    parse_yelp_readers(Cursor::new(reviews), Cursor::new(businesses), state_filter)
}

fn parse_yelp_readers<R: BufRead, B: BufRead>(
    reviews: R,
    businesses: B,
    state_filter: &str,
) -> Result<RawDataset> {
    let mut report = ParseReport::default();
    let mut categories = HashMap::new();
    let mut excluded = HashSet::new();

    for (idx, line) in businesses.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<business>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let b: Business = match serde_json::from_str(&line) {
            Ok(b) => b,
            Err(e) => {
                report.push(idx + 1, format!("business: {e}"));
                continue;
            }
        };
        let Some(id) = b.business_id else {
            report.push(idx + 1, "business: missing business_id");
            continue;
        };
        let Some(state) = b.state else {
            report.push(idx + 1, "business: missing state");
            continue;
        };
        if state != state_filter {
            excluded.insert(id);
            continue;
        }
        let labels: Vec<String> = b
            .categories
            .as_deref()
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(str::to_owned)
            .collect();
        if labels.is_empty() {
            report.push(idx + 1, "business: missing categories");
            excluded.insert(id);
            continue;
        }
        categories.insert(id, labels);
    }

    let mut ratings = Vec::new();
    for (idx, line) in reviews.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<review>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let r: Review = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.push(idx + 1, format!("review: {e}"));
                continue;
            }
        };
        let (Some(user), Some(item), Some(stars)) = (r.user_id, r.business_id, r.stars) else {
            report.push(idx + 1, "review: missing user_id, business_id or stars");
            continue;
        };
        if !categories.contains_key(&item) {
            if !excluded.contains(&item) {
                report.push(idx + 1, format!("review: unknown business {item}"));
            }
            continue;
        }
        let rounded = stars.round();
        if (stars - rounded).abs() > 1e-9 || !(1.0..=5.0).contains(&rounded) {
            report.push(idx + 1, format!("review: stars {stars} not an integer in 1..=5"));
            continue;
        }
        ratings.push(RawRating {
            user,
            item,
            rating: rounded as u8,
            timestamp: r.date.as_deref().and_then(parse_date),
        });
    }

    Ok(RawDataset {
        ratings,
        categories,
        report,
    })
}

fn parse_date(s: &str) -> Option<i64> {
    chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|d| d.and_utc().timestamp())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUSINESSES: &str = r#"{"business_id":"b1","state":"AZ","categories":"Restaurants, Mexican"}
{"business_id":"b2","state":"CA","categories":"Bars"}
{"business_id":"b3","state":"AZ","categories":null}
"#;

    #[test]
    fn filters_by_state_and_maps_stars() {
        let reviews = r#"{"user_id":"u1","business_id":"b1","stars":4.0,"date":"2016-03-09 00:44:23"}
{"user_id":"u1","business_id":"b2","stars":5.0}
"#;
        let raw = parse_yelp_str(reviews, BUSINESSES, "AZ").unwrap();
        assert_eq!(raw.ratings.len(), 1);
        assert_eq!(raw.ratings[0].rating, 4);
        assert_eq!(raw.ratings[0].timestamp, Some(1457484263));
        assert_eq!(raw.categories["b1"], vec!["Restaurants", "Mexican"]);
        assert!(!raw.categories.contains_key("b2"));
    }

    #[test]
    fn missing_fields_become_issues() {
        let reviews = r#"{"user_id":"u1","stars":4.0}
{"user_id":"u1","business_id":"b1","stars":3.5}
"#;
        let raw = parse_yelp_str(reviews, BUSINESSES, "AZ").unwrap();
        assert!(raw.ratings.is_empty());
        // null categories on b3 plus the two bad reviews
        assert_eq!(raw.report.issues.len(), 3);
    }

    #[test]
    fn missing_business_file_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let reviews = dir.path().join("review.json");
        std::fs::write(&reviews, "").unwrap();
        let err = parse_yelp(&reviews, &dir.path().join("business.json"), "AZ").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("business.json"));
    }
}
