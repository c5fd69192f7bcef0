use std::fs;
use std::io::Write;
use std::path::Path;

use super::state::AuditState;
use crate::error::Result;

/// Writes the state as one JSON document, replacing the file atomically.
pub fn save_state(state: &AuditState, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        serde_json::to_writer_pretty(&mut f, state)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<AuditState> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
