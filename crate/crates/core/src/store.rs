//! Durable record store.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/properties.jsonl
//! <root>/<project-id>/project.json
//! <root>/<project-id>/<kind>/records.jsonl   (append-only, last line per id wins)
//! <root>/<project-id>/<kind>/index.json      (id -> parent, atomically replaced)
//! <root>/<project-id>/data/<file>
//! ```
//!
//! Writes go through a single writer lock; readers see the in-memory
//! snapshot, which is updated only after the append reached the file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CoreError, Result};
use crate::model::{Project, PropertyDefinition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Subjects,
    Models,
    Configs,
    Collections,
    Runs,
    Cases,
    Results,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Subjects,
        Kind::Models,
        Kind::Configs,
        Kind::Collections,
        Kind::Runs,
        Kind::Cases,
        Kind::Results,
    ];

    pub fn dir(self) -> &'static str {
        match self {
            Kind::Subjects => "subjects",
            Kind::Models => "models",
            Kind::Configs => "configs",
            Kind::Collections => "collections",
            Kind::Runs => "runs",
            Kind::Cases => "cases",
            Kind::Results => "results",
        }
    }
}

/// A stored entity: its id, owning project, optional parent (for child
/// listings such as runs of a collection) and JSON body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    #[serde(skip)]
    pub project_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub body: Value,
}

impl Record {
    pub fn new<T: Serialize>(
        id: impl Into<String>,
        project_id: impl Into<String>,
        parent: Option<String>,
        body: &T,
    ) -> Result<Self> {
        Ok(Record {
            id: id.into(),
            project_id: project_id.into(),
            parent,
            body: serde_json::to_value(body)?,
        })
    }

    pub fn decode<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.body.clone())?)
    }
}

/// Storage backend. A relational implementation can replace the file store
/// behind this trait.
pub trait RecordStore: Send + Sync {
    fn put_project(&self, project: &Project) -> Result<()>;
    fn project(&self, id: &str) -> Option<Project>;
    fn projects(&self) -> Vec<Project>;
    /// Removes the project and everything it owns.
    fn delete_project(&self, id: &str) -> Result<()>;

    /// Appends records of one kind. Each record is written as one line.
    fn put(&self, kind: Kind, records: &[Record]) -> Result<()>;
    fn get(&self, kind: Kind, id: &str) -> Option<Record>;
    /// Records whose parent is `parent`, ordered by id.
    fn children(&self, kind: Kind, parent: &str) -> Vec<Record>;
    fn list(&self, kind: Kind, project_id: &str) -> Vec<Record>;

    fn put_property(&self, def: &PropertyDefinition) -> Result<()>;
    fn properties(&self) -> Vec<PropertyDefinition>;

    /// Stores a data file for a project and returns its store-relative location.
    fn save_data(&self, project_id: &str, file_name: &str, content: &[u8]) -> Result<String>;
    fn read_data(&self, location: &str) -> Result<Vec<u8>>;
}

#[derive(Default)]
struct State {
    projects: BTreeMap<String, Project>,
    records: HashMap<Kind, BTreeMap<String, Record>>,
    children: HashMap<(Kind, String), BTreeSet<String>>,
    properties: BTreeMap<String, PropertyDefinition>,
}

impl State {
    fn apply(&mut self, kind: Kind, record: Record) {
        if let Some(parent) = &record.parent {
            self.children
                .entry((kind, parent.clone()))
                .or_default()
                .insert(record.id.clone());
        }
        self.records
            .entry(kind)
            .or_default()
            .insert(record.id.clone(), record);
    }
}

pub struct FileStore {
    root: PathBuf,
    state: RwLock<State>,
    writer: Mutex<()>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn safe_file_name(name: &str) -> String {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let cleaned: String = base
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    let trimmed = cleaned.trim_start_matches('.');
    if trimmed.is_empty() {
        "data".to_string()
    } else {
        trimmed.to_string()
    }
}

impl FileStore {
    /// Opens (creating if needed) a store rooted at `root` and loads it.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut state = State::default();

        let props = root.join("properties.jsonl");
        if props.exists() {
            for line in BufReader::new(File::open(&props)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let def: PropertyDefinition = serde_json::from_str(&line)?;
                state.properties.insert(def.id.clone(), def);
            }
        }

        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            let project_file = entry.path().join("project.json");
            if !entry.file_type()?.is_dir() || !project_file.exists() {
                continue;
            }
            let project: Project = serde_json::from_slice(&fs::read(&project_file)?)?;
            for kind in Kind::ALL {
                let file = entry.path().join(kind.dir()).join("records.jsonl");
                if !file.exists() {
                    continue;
                }
                for line in BufReader::new(File::open(&file)?).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let mut record: Record = serde_json::from_str(&line)?;
                    record.project_id = project.id.clone();
                    state.apply(kind, record);
                }
            }
            state.projects.insert(project.id.clone(), project);
        }

        Ok(FileStore {
            root,
            state: RwLock::new(state),
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn project_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }
}

impl RecordStore for FileStore {
    fn put_project(&self, project: &Project) -> Result<()> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let dir = self.project_dir(&project.id);
        fs::create_dir_all(&dir)?;
        for kind in Kind::ALL {
            fs::create_dir_all(dir.join(kind.dir()))?;
        }
        fs::create_dir_all(dir.join("data"))?;
        write_atomic(&dir.join("project.json"), &serde_json::to_vec_pretty(project)?)?;
        self.write()
            .projects
            .insert(project.id.clone(), project.clone());
        Ok(())
    }

    fn project(&self, id: &str) -> Option<Project> {
        self.read().projects.get(id).cloned()
    }

    fn projects(&self) -> Vec<Project> {
        self.read().projects.values().cloned().collect()
    }

    fn delete_project(&self, id: &str) -> Result<()> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if !self.read().projects.contains_key(id) {
            return Err(CoreError::not_found("project", id));
        }
        let dir = self.project_dir(id);
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        let mut state = self.write();
        state.projects.remove(id);
        let mut removed: Vec<(Kind, String)> = Vec::new();
        for (kind, records) in state.records.iter_mut() {
            records.retain(|rid, r| {
                let keep = r.project_id != id;
                if !keep {
                    removed.push((*kind, rid.clone()));
                }
                keep
            });
        }
        for (kind, rid) in removed {
            state.children.remove(&(kind, rid));
        }
        let st = &mut *state;
        let records = &st.records;
        st.children.retain(|(kind, _), ids| {
            ids.retain(|cid| records.get(kind).is_some_and(|m| m.contains_key(cid)));
            !ids.is_empty()
        });
        Ok(())
    }

    fn put(&self, kind: Kind, records: &[Record]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut by_project: BTreeMap<&str, Vec<&Record>> = BTreeMap::new();
        for r in records {
            if !self.read().projects.contains_key(&r.project_id) {
                return Err(CoreError::not_found("project", r.project_id.clone()));
            }
            by_project.entry(r.project_id.as_str()).or_default().push(r);
        }
        for (project_id, recs) in by_project {
            let dir = self.project_dir(project_id).join(kind.dir());
            fs::create_dir_all(&dir)?;
            let mut buf = Vec::new();
            for r in &recs {
                serde_json::to_writer(&mut buf, r)?;
                buf.push(b'\n');
            }
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("records.jsonl"))?;
            file.write_all(&buf)?;
            file.flush()?;

            let index: BTreeMap<String, Option<String>> = {
                let state = self.read();
                let mut index: BTreeMap<String, Option<String>> = state
                    .records
                    .get(&kind)
                    .map(|m| {
                        m.values()
                            .filter(|r| r.project_id == project_id)
                            .map(|r| (r.id.clone(), r.parent.clone()))
                            .collect()
                    })
                    .unwrap_or_default();
                for r in &recs {
                    index.insert(r.id.clone(), r.parent.clone());
                }
                index
            };
            write_atomic(&dir.join("index.json"), &serde_json::to_vec(&index)?)?;
        }
        let mut state = self.write();
        for r in records {
            state.apply(kind, r.clone());
        }
        Ok(())
    }

    fn get(&self, kind: Kind, id: &str) -> Option<Record> {
        self.read().records.get(&kind)?.get(id).cloned()
    }

    fn children(&self, kind: Kind, parent: &str) -> Vec<Record> {
        let state = self.read();
        let Some(ids) = state.children.get(&(kind, parent.to_string())) else {
            return Vec::new();
        };
        let Some(records) = state.records.get(&kind) else {
            return Vec::new();
        };
        ids.iter().filter_map(|id| records.get(id).cloned()).collect()
    }

    fn list(&self, kind: Kind, project_id: &str) -> Vec<Record> {
        self.read()
            .records
            .get(&kind)
            .map(|m| {
                m.values()
                    .filter(|r| r.project_id == project_id)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    fn put_property(&self, def: &PropertyDefinition) -> Result<()> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut line = serde_json::to_vec(def)?;
        line.push(b'\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("properties.jsonl"))?;
        file.write_all(&line)?;
        self.write().properties.insert(def.id.clone(), def.clone());
        Ok(())
    }

    fn properties(&self) -> Vec<PropertyDefinition> {
        self.read().properties.values().cloned().collect()
    }

    fn save_data(&self, project_id: &str, file_name: &str, content: &[u8]) -> Result<String> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let name = safe_file_name(file_name);
        let dir = self.project_dir(project_id).join("data");
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(&name), content)?;
        Ok(format!("{project_id}/data/{name}"))
    }

    fn read_data(&self, location: &str) -> Result<Vec<u8>> {
        let rel = Path::new(location);
        if rel
            .components()
            .any(|c| !matches!(c, Component::Normal(_)))
        {
            return Err(CoreError::invalid(format!("bad data location {location}")));
        }
        Ok(fs::read(self.root.join(rel))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;
    use serde_json::json;

    fn project(id: &str) -> Project {
        Project {
            id: id.into(),
            name: format!("p-{id}"),
            test_subjects: vec![],
            created_at: Utc::now(),
        }
    }

    #[test]
    fn records_survive_reopen_and_last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = FileStore::open(dir.path()).unwrap();
            store.put_project(&project("P1")).unwrap();
            let r1 = Record::new("R1", "P1", Some("C1".into()), &json!({"v": 1})).unwrap();
            let r2 = Record::new("R2", "P1", Some("C1".into()), &json!({"v": 2})).unwrap();
            store.put(Kind::Runs, &[r1, r2]).unwrap();
            let r1b = Record::new("R1", "P1", Some("C1".into()), &json!({"v": 3})).unwrap();
            store.put(Kind::Runs, &[r1b]).unwrap();
        }
        let store = FileStore::open(dir.path()).unwrap();
        let kids = store.children(Kind::Runs, "C1");
        assert_eq!(kids.len(), 2);
        assert_eq!(kids[0].body, json!({"v": 3}));
        assert_eq!(kids[0].project_id, "P1");
        assert!(dir.path().join("P1/runs/index.json").exists());
        let index: BTreeMap<String, Option<String>> =
            serde_json::from_slice(&fs::read(dir.path().join("P1/runs/index.json")).unwrap())
                .unwrap();
        assert_eq!(index.len(), 2);
    }

    #[test]
    fn delete_project_cascades() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        store.put_project(&project("P1")).unwrap();
        store.put_project(&project("P2")).unwrap();
        store
            .put(Kind::Cases, &[Record::new("A", "P1", Some("R".into()), &json!(1)).unwrap()])
            .unwrap();
        store
            .put(Kind::Cases, &[Record::new("B", "P2", Some("R2".into()), &json!(2)).unwrap()])
            .unwrap();
        store.delete_project("P1").unwrap();
        assert!(store.get(Kind::Cases, "A").is_none());
        assert!(store.children(Kind::Cases, "R").is_empty());
        assert!(store.get(Kind::Cases, "B").is_some());
        assert!(!dir.path().join("P1").exists());
        assert!(store.delete_project("P1").is_err());
    }

    #[test]
    fn data_locations_are_store_relative() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        store.put_project(&project("P1")).unwrap();
        let loc = store.save_data("P1", "../train.csv", b"a,b\n1,2\n").unwrap();
        assert_eq!(loc, "P1/data/train.csv");
        assert_eq!(store.read_data(&loc).unwrap(), b"a,b\n1,2\n");
        assert!(store.read_data("../etc/passwd").is_err());
    }

    #[test]
    fn put_into_unknown_project_fails() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let r = Record::new("A", "nope", None, &json!(1)).unwrap();
        assert!(store.put(Kind::Cases, &[r]).is_err());
    }
}
