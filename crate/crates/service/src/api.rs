//! JSON HTTP API over the repository and the orchestrator.
//!
//! Errors are `{code, message, detail}`. Handlers run their work on the
//! blocking pool: storage is file based and model calls are blocking.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use probekit_core::model::{DataFormat, DataKind, HttpMethod, Modality, ModelSpec, PropertyDefinition, TestSubject};
use probekit_core::repo::{DataUpload, NewConfig};
use probekit_core::CoreError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ServiceError;
use crate::orchestrator::Orchestrator;
use crate::report::{failure_page, metric_report};

pub const DEFAULT_FAILURE_PAGE: usize = 50;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, code) = match &e {
            ServiceError::Core(c) => match c {
                CoreError::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
                CoreError::Duplicate(_) => (StatusCode::CONFLICT, "duplicate"),
                CoreError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid"),
                CoreError::Data(_) => (StatusCode::UNPROCESSABLE_ENTITY, "bad_data"),
                CoreError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
                CoreError::Predictor(_) => (StatusCode::BAD_GATEWAY, "predictor"),
                CoreError::Io(_) | CoreError::Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            },
            ServiceError::Unreachable(_) => (StatusCode::BAD_GATEWAY, "model_unreachable"),
            ServiceError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid"),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        ServiceError::Core(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "code": self.code,
            "message": self.message,
            "detail": {"status": self.status.as_u16()},
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_body",
            message: e.body_text(),
        }
    }
}

/// JSON request body whose rejections use the API error shape.
pub struct Body<T>(pub T);

impl<T, S> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, ApiError> {
        let Json(v) = Json::<T>::from_request(req, state).await?;
        Ok(Body(v))
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::from(ServiceError::Internal(e.to_string())))?
        .map_err(ApiError::from)
}

type Shared = Arc<Orchestrator>;

// ------------------------------------------------------------- bodies

#[derive(Debug, Deserialize)]
pub struct NewProject {
    pub name: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UploadBody {
    pub file_name: String,
    #[serde(default)]
    pub format: Option<DataFormat>,
    pub content: String,
}

impl UploadBody {
    fn into_upload(self, kind: DataKind) -> DataUpload {
        DataUpload {
            kind,
            file_name: self.file_name,
            format: self.format,
            content: self.content,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct NewSubject {
    pub modality: Modality,
    pub model: ModelSpec,
    pub training: UploadBody,
    #[serde(default)]
    pub labeled_eval: Option<UploadBody>,
}

#[derive(Debug, Deserialize)]
pub struct AddData {
    pub kind: DataKind,
    #[serde(flatten)]
    pub upload: UploadBody,
}

#[derive(Debug, Default, Deserialize)]
pub struct RunRequest {
    #[serde(default)]
    pub idempotency_key: Option<String>,
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct CompareQuery {
    pub collections: String,
}

/// A model as shown to clients: header names only, never values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelView {
    pub id: String,
    pub name: String,
    pub endpoint_url: String,
    pub http_method: HttpMethod,
    pub header_names: Vec<String>,
    pub request_template: String,
    pub label_path: String,
    pub confidence_path: Option<String>,
    pub batch_limit: usize,
}

impl From<&ModelSpec> for ModelView {
    fn from(m: &ModelSpec) -> Self {
        ModelView {
            id: m.id.clone(),
            name: m.name.clone(),
            endpoint_url: m.endpoint_url.clone(),
            http_method: m.http_method,
            header_names: m.headers.keys().cloned().collect(),
            request_template: m.request_template.clone(),
            label_path: m.label_path.clone(),
            confidence_path: m.confidence_path.clone(),
            batch_limit: m.batch_limit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectView {
    #[serde(flatten)]
    pub subject: TestSubject,
    pub model: ModelView,
}

// ------------------------------------------------------------- handlers

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn list_properties(State(o): State<Shared>) -> ApiResult<Vec<PropertyDefinition>> {
    Ok(Json(blocking(move || Ok(o.repo().properties())).await?))
}

async fn register_property(
    State(o): State<Shared>,
    Body(def): Body<PropertyDefinition>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let id = blocking(move || Ok(o.repo().register_property_definition(&def)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({"id": id}))))
}

async fn create_project(State(o): State<Shared>, Body(body): Body<NewProject>) -> Result<impl IntoResponse, ApiError> {
    let p = blocking(move || Ok(o.repo().create_project(&body.name)?)).await?;
    Ok((StatusCode::CREATED, Json(p)))
}

async fn list_projects(State(o): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || Ok(o.repo().projects())).await?))
}

async fn get_project(State(o): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || Ok(o.repo().project(&id)?)).await?))
}

async fn delete_project(State(o): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    blocking(move || Ok(o.repo().delete_project(&id)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

fn subject_view(o: &Orchestrator, subject: TestSubject) -> Result<SubjectView, ServiceError> {
    let model = o.repo().model(&subject.model_id)?;
    Ok(SubjectView {
        model: ModelView::from(&model),
        subject,
    })
}

async fn register_subject(
    State(o): State<Shared>,
    Path(project): Path<String>,
    Body(body): Body<NewSubject>,
) -> Result<impl IntoResponse, ApiError> {
    let view = blocking(move || {
        let repo = o.repo();
        let mut subject = repo.register_test_subject(
            &project,
            body.modality,
            body.model,
            &body.training.into_upload(DataKind::Training),
        )?;
        if let Some(eval) = body.labeled_eval {
            subject = repo.add_subject_data(&subject.id, &eval.into_upload(DataKind::LabeledEval))?;
        }
        subject_view(&o, subject)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_subjects(State(o): State<Shared>, Path(project): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let views = blocking(move || {
        o.repo().project(&project)?;
        o.repo()
            .subjects(&project)
            .into_iter()
            .map(|s| subject_view(&o, s))
            .collect::<Result<Vec<_>, _>>()
    })
    .await?;
    Ok(Json(views))
}

async fn add_data(
    State(o): State<Shared>,
    Path(id): Path<String>,
    Body(body): Body<AddData>,
) -> Result<impl IntoResponse, ApiError> {
    let view = blocking(move || {
        let s = o.repo().add_subject_data(&id, &body.upload.into_upload(body.kind))?;
        subject_view(&o, s)
    })
    .await?;
    Ok(Json(view))
}

async fn get_subject(State(o): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || subject_view(&o, o.repo().subject(&id)?)).await?))
}

async fn create_config(
    State(o): State<Shared>,
    Path(subject): Path<String>,
    Body(body): Body<NewConfig>,
) -> Result<impl IntoResponse, ApiError> {
    let c = blocking(move || Ok(o.repo().create_config(&subject, body)?)).await?;
    Ok((StatusCode::CREATED, Json(c)))
}

async fn get_config(State(o): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || Ok(o.repo().config(&id)?)).await?))
}

async fn run_config(
    State(o): State<Shared>,
    Path(id): Path<String>,
    body: Option<Json<RunRequest>>,
) -> Result<impl IntoResponse, ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let c = blocking(move || o.execute(&id, req.idempotency_key.as_deref(), req.force)).await?;
    Ok((StatusCode::ACCEPTED, Json(c)))
}

async fn collection_status(State(o): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || o.status(&id)).await?))
}

async fn cancel_collection(State(o): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let outcome = blocking(move || o.cancel(&id)).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({"outcome": outcome}))))
}

async fn run_metrics(State(o): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || metric_report(o.repo(), &id)).await?))
}

async fn run_failures(
    State(o): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<PageQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let limit = q.limit.unwrap_or(DEFAULT_FAILURE_PAGE);
    Ok(Json(blocking(move || failure_page(o.repo(), &id, q.offset, limit)).await?))
}

async fn reevaluate(State(o): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || o.reevaluate(&id)).await?))
}

async fn compare(
    State(o): State<Shared>,
    Path(project): Path<String>,
    Query(q): Query<CompareQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let ids: Vec<String> = q
        .collections
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let report = blocking(move || {
        let report = o.repo().compare_collections(&ids)?;
        if report.project_id != project {
            return Err(CoreError::invalid("collections belong to another project").into());
        }
        Ok(report)
    })
    .await?;
    Ok(Json(report))
}

async fn list_collections(State(o): State<Shared>, Path(config): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let list = blocking(move || {
        o.repo().config(&config)?;
        let mut list = o.repo().collections_of(&config);
        list.sort_by_key(|c| c.started_at);
        Ok(list)
    })
    .await?;
    Ok(Json(list))
}

pub fn router(orchestrator: Arc<Orchestrator>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/properties", get(list_properties).post(register_property))
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{id}", get(get_project).delete(delete_project))
        .route("/projects/{id}/subjects", get(list_subjects).post(register_subject))
        .route("/projects/{id}/compare", get(compare))
        .route("/subjects/{id}", get(get_subject))
        .route("/subjects/{id}/data", post(add_data))
        .route("/subjects/{id}/configs", post(create_config))
        .route("/configs/{id}", get(get_config))
        .route("/configs/{id}/run", post(run_config))
        .route("/configs/{id}/collections", get(list_collections))
        .route("/collections/{id}/status", get(collection_status))
        .route("/collections/{id}", axum::routing::delete(cancel_collection))
        .route("/runs/{id}/metrics", get(run_metrics))
        .route("/runs/{id}/failures", get(run_failures))
        .route("/runs/{id}/reevaluate", post(reevaluate))
        .with_state(orchestrator)
}
