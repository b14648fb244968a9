//! C ABI over the airfoil optimization library.
//!
//! Every fallible function returns an [`AfdStatus`]; on failure the reason is
//! available from [`afd_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Panics never cross the
//! boundary; they surface as `AFD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use airfoil_drl::aero::{self, FlowConditions, SolverConfig};
use airfoil_drl::env::{bundled_data_dir, AirfoilEnv, EnvConfig, EnvError, ResetPool, TerminationReason};
use airfoil_drl::geometry::{cst_to_geometry, fit_cst, max_thickness, read_dat, CstParams, N_PARAMS};
use airfoil_drl::nn::{ActorCritic, AgentCheckpoint};

/// Length of every parameter, observation and action array.
pub const AFD_N_PARAMS: usize = 18;
const _: () = assert!(AFD_N_PARAMS == N_PARAMS);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// The solver did not converge or the geometry was rejected.
    Solver = 4,
    /// Call out of order, e.g. stepping before reset.
    Contract = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfdFidelity {
    High = 0,
    Low = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfdTermination {
    Running = 0,
    MaxSteps = 1,
    SolverFailure = 2,
    InvalidGeometry = 3,
}

/// Outcome of one environment step. Lift and drag are NaN when the step failed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AfdStep {
    pub reward: f64,
    pub terminated: bool,
    pub reason: AfdTermination,
    pub cl: f64,
    pub cd: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub max_thickness: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AfdAero {
    pub cl: f64,
    pub cd: f64,
    pub confidence: f64,
    pub max_thickness: f64,
}

/// Opaque environment handle.
pub struct AfdEnv {
    env: AirfoilEnv,
}

/// Opaque agent handle.
pub struct AfdAgent {
    agent: ActorCritic,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Fail(AfdStatus, String);

impl From<EnvError> for Fail {
    fn from(e: EnvError) -> Self {
        let status = match e {
            EnvError::ContractViolation(_) => AfdStatus::Contract,
            EnvError::Reset(_) | EnvError::Aero(_) => AfdStatus::Solver,
            EnvError::Pool(_) => AfdStatus::Io,
            _ => AfdStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AfdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AfdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AfdStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AfdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_array<'a>(p: *const f64, what: &str) -> Result<&'a [f64; N_PARAMS], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(&*(p as *const [f64; N_PARAMS]))
}

unsafe fn write_array(p: *mut f64, values: &[f64; N_PARAMS], what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), p, N_PARAMS);
    Ok(())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AfdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message describing the last failure on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn afd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn afd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Create an environment. `config_toml` may be NULL for defaults; otherwise
/// it holds environment settings in TOML (`sigma = 15.0`, `fidelity = "high"`, ...).
/// The reset pool is fitted from `data_dir`, or the bundled airfoils when NULL.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn afd_env_new(
    config_toml: *const c_char,
    data_dir: *const c_char,
    seed: u64,
    out: *mut *mut AfdEnv,
) -> AfdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mut config: EnvConfig = if config_toml.is_null() {
            EnvConfig::default()
        } else {
            toml::from_str(read_str(config_toml, "config_toml")?)
                .map_err(|e| Fail(AfdStatus::InvalidArgument, format!("config: {e}")))?
        };
        config.rng_seed = seed;
        config.validate()?;
        let dir = if data_dir.is_null() {
            bundled_data_dir()
        } else {
            PathBuf::from(read_str(data_dir, "data_dir")?)
        };
        let pool = ResetPool::fit_from_dir(&dir, &config.reset_pool, &config.bounds)?;
        let env = AirfoilEnv::new(config, Arc::new(pool))?;
        *out = Box::into_raw(Box::new(AfdEnv { env }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from `afd_env_new` and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn afd_env_free(env: *mut AfdEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Start an episode from a random pool airfoil; writes the normalized
/// observation to `obs_out`.
///
/// # Safety
/// `env` must be a live handle; `obs_out` must hold `AFD_N_PARAMS` doubles.
#[no_mangle]
pub unsafe extern "C" fn afd_env_reset(env: *mut AfdEnv, obs_out: *mut f64) -> AfdStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let obs = env.env.reset()?;
        write_array(obs_out, &obs, "obs_out")
    })
}

/// Start an episode from the given CST parameters.
///
/// # Safety
/// `env` must be a live handle; both arrays must hold `AFD_N_PARAMS` doubles.
#[no_mangle]
pub unsafe extern "C" fn afd_env_reset_to(env: *mut AfdEnv, params: *const f64, obs_out: *mut f64) -> AfdStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let p = CstParams::from_array(read_array(params, "params")?);
        let obs = env.env.reset_to(p, "external")?;
        write_array(obs_out, &obs, "obs_out")
    })
}

/// Apply one action. `obs_out` and `params_out` may be NULL.
///
/// # Safety
/// `env` must be a live handle; non-NULL arrays must hold `AFD_N_PARAMS`
/// doubles; `step_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn afd_env_step(
    env: *mut AfdEnv,
    action: *const f64,
    obs_out: *mut f64,
    params_out: *mut f64,
    step_out: *mut AfdStep,
) -> AfdStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        if step_out.is_null() {
            return Err(null("step_out"));
        }
        let o = env.env.step(read_array(action, "action")?)?;
        if !obs_out.is_null() {
            write_array(obs_out, &o.observation, "obs_out")?;
        }
        if !params_out.is_null() {
            write_array(params_out, &o.params.to_array(), "params_out")?;
        }
        *step_out = AfdStep {
            reward: o.reward,
            terminated: o.terminated,
            reason: match o.reason {
                TerminationReason::Running => AfdTermination::Running,
                TerminationReason::MaxSteps => AfdTermination::MaxSteps,
                TerminationReason::SolverFailure => AfdTermination::SolverFailure,
                TerminationReason::InvalidGeometry => AfdTermination::InvalidGeometry,
            },
            cl: o.info.cl.unwrap_or(f64::NAN),
            cd: o.info.cd.unwrap_or(f64::NAN),
            kappa: o.info.kappa,
            lambda: o.info.lambda,
            max_thickness: o.info.mt,
        };
        Ok(())
    })
}

/// Current CST parameters of the running episode.
///
/// # Safety
/// `env` must be a live handle; `params_out` must hold `AFD_N_PARAMS` doubles.
#[no_mangle]
pub unsafe extern "C" fn afd_env_params(env: *const AfdEnv, params_out: *mut f64) -> AfdStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let state = env
            .env
            .state()
            .ok_or_else(|| Fail(AfdStatus::Contract, "no episode in progress".into()))?;
        write_array(params_out, &state.params.to_array(), "params_out")
    })
}

/// Load an agent from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn afd_agent_load(path: *const c_char, out: *mut *mut AfdAgent) -> AfdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = read_str(path, "path")?;
        let ck = AgentCheckpoint::load(path.as_ref()).map_err(|e| Fail(AfdStatus::Io, e.to_string()))?;
        if ck.agent.obs_dim() != N_PARAMS || ck.agent.act_dim() != N_PARAMS {
            return Err(Fail(AfdStatus::InvalidArgument, "agent is not sized for 18 CST parameters".into()));
        }
        *out = Box::into_raw(Box::new(AfdAgent { agent: ck.agent }));
        Ok(())
    })
}

/// # Safety
/// `agent` must come from `afd_agent_load` and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn afd_agent_free(agent: *mut AfdAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Deterministic action (the policy mean) for a normalized observation.
///
/// # Safety
/// `agent` must be a live handle; both arrays must hold `AFD_N_PARAMS` doubles.
#[no_mangle]
pub unsafe extern "C" fn afd_agent_act(agent: *const AfdAgent, obs: *const f64, action_out: *mut f64) -> AfdStatus {
    guard(|| {
        let agent = agent.as_ref().ok_or_else(|| null("agent"))?;
        let mean = agent
            .agent
            .mean_action(read_array(obs, "obs")?)
            .map_err(|e| Fail(AfdStatus::InvalidArgument, e.to_string()))?;
        let mut a = [0.0; N_PARAMS];
        a.copy_from_slice(&mean);
        write_array(action_out, &a, "action_out")
    })
}

/// Fit CST parameters to a Selig or Lednicer `.dat` file. `residual_out` may be NULL.
///
/// # Safety
/// `path` must be NUL-terminated; `params_out` must hold `AFD_N_PARAMS` doubles.
#[no_mangle]
pub unsafe extern "C" fn afd_fit_dat(path: *const c_char, params_out: *mut f64, residual_out: *mut f64) -> AfdStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let coords = read_dat(path.as_ref()).map_err(|e| Fail(AfdStatus::Io, e.to_string()))?;
        let fit = fit_cst(&coords.points, &Default::default())
            .map_err(|e| Fail(AfdStatus::InvalidArgument, e.to_string()))?;
        write_array(params_out, &fit.params.to_array(), "params_out")?;
        if !residual_out.is_null() {
            *residual_out = fit.residual;
        }
        Ok(())
    })
}

/// Solve one design at the default flow conditions (2°, Re 1e6, Ma 0.5).
///
/// # Safety
/// `params` must hold `AFD_N_PARAMS` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn afd_solve(params: *const f64, fidelity: AfdFidelity, out: *mut AfdAero) -> AfdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CstParams::from_array(read_array(params, "params")?);
        let geom = cst_to_geometry(&p, 200).map_err(|e| Fail(AfdStatus::InvalidArgument, e.to_string()))?;
        let config = match fidelity {
            AfdFidelity::High => SolverConfig::high(),
            AfdFidelity::Low => SolverConfig::low(),
        };
        let r = aero::solve(&geom, &FlowConditions::default(), &config)
            .map_err(|e| Fail(AfdStatus::Solver, e.to_string()))?;
        let c = r.coefficients.ok_or_else(|| {
            Fail(
                AfdStatus::Solver,
                r.failure.clone().unwrap_or_else(|| "solver did not converge".into()),
            )
        })?;
        *out = AfdAero {
            cl: c.cl,
            cd: c.cd,
            confidence: r.confidence,
            max_thickness: max_thickness(&geom),
        };
        Ok(())
    })
}
