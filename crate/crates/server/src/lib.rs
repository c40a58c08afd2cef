//! HTTP service and command line around the `lecture-rag` library.
//!
//! Routes (all errors are `{"error_code", "message"}` JSON):
//!
//! | route | |
//! |---|---|
//! | `GET /api/tasks` | task summaries |
//! | `GET /api/tasks/{id}` | full task |
//! | `POST /api/tasks/{id}/submissions` | evaluate `{"code"}` |
//! | `POST /api/submissions/{id}/feedback?lecture=true\|false` | SSE: `token`*, `citations`, `done` (or `error`) |
//! | `GET /api/videos/{file}` | video bytes with range support |
//! | `GET /api/stats` | usage statistics |

pub mod app;
pub mod cli;
pub mod config;
pub mod usage;
