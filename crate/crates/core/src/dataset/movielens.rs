use std::collections::HashMap;
use std::path::Path;

use super::{ParseReport, RawDataset, RawRating};
use crate::error::{Error, Result};

/// Above this share of malformed rating lines the whole file is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Parses a `UserID::MovieID::Rating::Timestamp` ratings file and a
/// `MovieID::Title::Genre|Genre|...` movies file.
pub fn parse_movielens(ratings_path: &Path, movies_path: &Path) -> Result<RawDataset> {
    let ratings = read_text(ratings_path)?;
    let movies = read_text(movies_path)?;
    parse_movielens_str(&ratings, &movies).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: ratings_path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// MovieLens files are Latin-1 in places; titles are never used, so a lossy
/// decode is enough.
fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    })
}

pub fn parse_movielens_str(ratings: &str, movies: &str) -> Result<RawDataset> {
    let mut report = ParseReport::default();
    let mut out = Vec::new();
    for (idx, line) in ratings.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        match parse_rating_line(line) {
            Ok(r) => out.push(r),
            Err(msg) => report.push(idx + 1, msg),
        }
    }
    if report.malformed_fraction() > MAX_MALFORMED_FRACTION {
        return Err(Error::Parse {
            path: "<ratings>".into(),
            message: format!(
                "{} of {} lines malformed (first: line {}: {})",
                report.issues.len(),
                report.lines,
                report.issues[0].line,
                report.issues[0].message
            ),
        });
    }

    let mut categories = HashMap::new();
    for (idx, line) in movies.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 3 {
            report.push(idx + 1, format!("movies: expected 3 fields, got {}", fields.len()));
            continue;
        }
        let genres: Vec<String> = fields[2]
            .trim_end_matches('\r')
            .split('|')
            .filter(|g| !g.is_empty())
            .map(str::to_owned)
            .collect();
        if genres.is_empty() {
            report.push(idx + 1, "movies: no genres");
            continue;
        }
        categories.insert(fields[0].trim().to_owned(), genres);
    }

    Ok(RawDataset {
        ratings: out,
        categories,
        report,
    })
}

fn parse_rating_line(line: &str) -> std::result::Result<RawRating, String> {
    let fields: Vec<&str> = line.trim_end_matches('\r').split("::").collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, got {}", fields.len()));
    }
    let user = fields[0].trim();
    let item = fields[1].trim();
    if user.is_empty() || item.is_empty() {
        return Err("empty id".into());
    }
    let rating: u8 = fields[2]
        .trim()
        .parse()
        .map_err(|_| format!("bad rating {:?}", fields[2]))?;
    if !(1..=5).contains(&rating) {
        return Err(format!("rating {rating} outside 1..=5"));
    }
    let timestamp: i64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", fields[3]))?;
    Ok(RawRating {
        user: user.to_owned(),
        item: item.to_owned(),
        rating,
        timestamp: Some(timestamp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MOVIES: &str = "1193::One Flew Over the Cuckoo's Nest (1975)::Drama\n\
                          661::James and the Giant Peach (1996)::Animation|Children's|Musical\n";

    #[test]
    fn parses_documented_line() {
        let raw = parse_movielens_str("1::1193::5::978300760\n", MOVIES).unwrap();
        assert_eq!(
            raw.ratings,
            vec![RawRating {
                user: "1".into(),
                item: "1193".into(),
                rating: 5,
                timestamp: Some(978300760),
            }]
        );
        assert_eq!(
            raw.categories["661"],
            vec!["Animation", "Children's", "Musical"]
        );
        assert!(raw.report.issues.is_empty());
    }

    #[test]
    fn out_of_range_rating_is_reported_and_skipped() {
        let mut text = String::new();
        for u in 0..200 {
            text.push_str(&format!("{u}::1193::4::1\n"));
        }
        text.push_str("7::1193::6::978300760\n");
        let raw = parse_movielens_str(&text, MOVIES).unwrap();
        assert_eq!(raw.ratings.len(), 200);
        assert_eq!(raw.report.issues.len(), 1);
        assert_eq!(raw.report.issues[0].line, 201);
        assert!(raw.report.issues[0].message.contains("rating 6"));
    }

    #[test]
    fn too_many_malformed_lines_is_fatal() {
        let text = "1::1193::5::1\n1::661::x::1\n";
        let err = parse_movielens_str(text, MOVIES).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn latin1_movies_file_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let ratings = dir.path().join("ratings.dat");
        let movies = dir.path().join("movies.dat");
        std::fs::write(&ratings, "1::73::5::1\n").unwrap();
        std::fs::write(&movies, b"73::Mis\xe9rables, Les (1995)::Drama|Musical\n").unwrap();
        let raw = parse_movielens(&ratings, &movies).unwrap();
        assert_eq!(raw.categories["73"], vec!["Drama", "Musical"]);
    }

    #[test]
    fn missing_file_names_path() {
        let err = parse_movielens(Path::new("/nonexistent/ratings.dat"), Path::new("/x")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ratings.dat"));
    }
}
