//! On-disk datasets: a directory of XYZ files plus `index.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::{read_xyz, write_xyz};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub file: String,
    pub label: usize,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub classes: Vec<String>,
    pub items: Vec<Item>,
}

/// A labeled train/test split with class names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut items = Vec::new();
        for (split, clouds) in [("train", &self.train), ("test", &self.test)] {
            fs::create_dir_all(dir.join(split))?;
            for (i, pc) in clouds.iter().enumerate() {
                let label = pc.label.ok_or_else(|| Error::Config(format!("{split} cloud {i} has no label")))?;
                let file = format!("{split}/{i:05}.xyz");
                write_xyz(fs::File::create(dir.join(&file))?, pc)?;
                items.push(Item { file, label, split: split.to_string() });
            }
        }
        let index = Index { classes: self.classes.clone(), items };
        fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: Index = serde_json::from_str(&fs::read_to_string(dir.join("index.json"))?)?;
        let mut out = Dataset { classes: index.classes.clone(), train: Vec::new(), test: Vec::new() };
        for item in &index.items {
            if item.label >= index.classes.len() {
                return Err(Error::Config(format!("{}: label {} out of range", item.file, item.label)));
            }
            let pc = read_xyz(fs::File::open(dir.join(&item.file))?)?.with_label(item.label);
            match item.split.as_str() {
                "train" => out.train.push(pc),
                "test" => out.test.push(pc),
                other => return Err(Error::Config(format!("{}: unknown split {other:?}", item.file))),
            }
        }
        Ok(out)
    }
}
