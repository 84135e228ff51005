//! JSON-lines store cache.
//!
//! Layout, one JSON document per line:
//!
//! 1. `{"format":"privrec-store","version":1}`
//! 2. `{"categories":[...]}` (category label table)
//! 3. one `{"item":<external id>,"categories":[<category index>...]}` per item, in index order
//! 4. one `{"user":<external id>,"items":[...],"timestamps":[...]}` per user, in index order
//!
//! A reader that sees any other format name or version refuses the file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::InteractionStore;
use crate::error::{Error, Result};

pub const CACHE_FORMAT: &str = "privrec-store";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Categories {
    categories: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemLine {
    item: String,
    categories: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserLine {
    user: String,
    items: Vec<usize>,
    timestamps: Vec<Option<i64>>,
}

pub fn write_cache(store: &InteractionStore, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    write_lines(store, &tmp).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_lines(store: &InteractionStore, path: &Path) -> std::io::Result<()> {
    fn line<T: Serialize>(w: &mut impl Write, value: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, value)?;
        w.write_all(b"\n")
    }
    let mut w = BufWriter::new(File::create(path)?);
    line(
        &mut w,
        &Header {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
        },
    )?;
    line(
        &mut w,
        &Categories {
            categories: store.category_names.clone(),
        },
    )?;
    for (id, cats) in store.item_ids.iter().zip(&store.item_categories) {
        line(
            &mut w,
            &ItemLine {
                item: id.clone(),
                categories: cats.clone(),
            },
        )?;
    }
    for u in 0..store.num_users() {
        line(
            &mut w,
            &UserLine {
                user: store.user_ids[u].clone(),
                items: store.positives[u].clone(),
                timestamps: store.timestamps[u].clone(),
            },
        )?;
    }
    w.flush()
}

pub fn read_cache(path: &Path) -> Result<InteractionStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = |what: &str| -> Result<String> {
        match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e)),
            None => Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("truncated cache: expected {what}"),
            }),
        }
    };

    let header: Header = serde_json::from_str(&next("header")?)?;
    if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
        return Err(Error::CacheVersion(format!(
            "{} has {} v{}, expected {} v{}",
            path.display(),
            header.format,
            header.version,
            CACHE_FORMAT,
            CACHE_VERSION
        )));
    }
    let cats: Categories = serde_json::from_str(&next("category table")?)?;
    let mut store = InteractionStore {
        positives: Vec::new(),
        timestamps: Vec::new(),
        item_categories: Vec::new(),
        category_names: cats.categories,
        user_ids: Vec::new(),
        item_ids: Vec::new(),
    };
    let mut in_users = false;
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        if !in_users {
            if let Ok(item) = serde_json::from_str::<ItemLine>(&line) {
                store.item_ids.push(item.item);
                store.item_categories.push(item.categories);
                continue;
            }
            in_users = true;
        }
        let user: UserLine = serde_json::from_str(&line)?;
        store.user_ids.push(user.user);
        store.positives.push(user.items);
        store.timestamps.push(user.timestamps);
    }
    validate(&store).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })?;
    Ok(store)
}

fn validate(store: &InteractionStore) -> std::result::Result<(), String> {
    let n_items = store.num_items();
    let n_cats = store.category_names.len();
    for (i, cats) in store.item_categories.iter().enumerate() {
        if cats.is_empty() || cats.iter().any(|&c| c >= n_cats) {
            return Err(format!("item {i} has invalid categories"));
        }
    }
    for (u, items) in store.positives.iter().enumerate() {
        if items.len() != store.timestamps[u].len() {
            return Err(format!("user {u}: timestamps misaligned"));
        }
        if items.windows(2).any(|w| w[0] >= w[1]) || items.iter().any(|&i| i >= n_items) {
            return Err(format!("user {u}: items not sorted or out of range"));
        }
    }
    Ok(())
}
