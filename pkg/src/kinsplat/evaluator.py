"""Closed-loop policy evaluation service.

Hosts one episode per TCP connection: the server renders the scene at the
current joint state and streams it to the policy client, which answers
with a joint-space action; the server applies kinematic stepping with
safety checks and repeats until the episode terminates.

Wire protocol: length-prefixed (4-byte big-endian) UTF-8 JSON messages.

    server -> client  {"type": "obs", "step", "joint_state", "object_poses",
                       "image": base64 PNG, "width", "height"}
    client -> server  {"type": "act", "mode": "absolute"|"delta",
                       "joints": [...], "done": false}
    server -> client  {"type": "end", "reason", "steps", "detail"?}

Termination reasons: done (client flag), step_budget, limit_violation,
workspace_violation (end-effector outside the configured box, whose lower
z face doubles as the table plane), client_error (malformed message or
disconnect). A violating action never mutates state: the episode freezes
at the pre-step values. Every client message gets exactly one reply, the
reply to a terminating action being the end message. Safety checks are
purely kinematic; there is no physics here.

Each connection's traffic is persisted as newline-delimited JSON rows
{"t": wall-clock seconds, "dir": "send"|"recv", "msg": {...}}. States and
observations are a pure function of (initial state, action sequence);
only the "t" fields vary between identical runs.
"""

from __future__ import annotations

import base64
import json
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .images import encode_png
from .kinematics import JointState, MdhChain, forward_kinematics, drive_scene
from .rasterizer import CameraModel, render
from .splats import GaussianScene
from .transforms import SimilarityTransform


class ProtocolError(ValueError):
    pass


MAX_MESSAGE_BYTES = 64 * 1024 * 1024


# ---------------------------------------------------------------------------
# framing
# ---------------------------------------------------------------------------

def send_message(sock: socket.socket, message: dict) -> None:
    payload = json.dumps(message, sort_keys=True).encode("utf-8")
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            return None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_message(sock: socket.socket) -> Optional[dict]:
    """One framed message; None on orderly EOF at a frame boundary."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    payload = _recv_exact(sock, length)
    if payload is None:
        raise ProtocolError("connection closed mid-frame")
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable frame: {exc}") from exc
    if not isinstance(message, dict):
        raise ProtocolError("frame must hold a JSON object")
    return message


# ---------------------------------------------------------------------------
# episode state machine
# ---------------------------------------------------------------------------

@dataclass
class WorkspaceBox:
    """Axis-aligned end-effector bounds; lower z is the table plane."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64).reshape(3)
        self.upper = np.asarray(self.upper, dtype=np.float64).reshape(3)
        if not np.all(self.lower < self.upper):
            raise ValueError("workspace box must have lower < upper per axis")

    def contains(self, point: np.ndarray) -> bool:
        point = np.asarray(point, dtype=np.float64).reshape(3)
        return bool(np.all(point >= self.lower) and np.all(point <= self.upper))


@dataclass
class ActionMessage:
    mode: str
    joints: np.ndarray
    done: bool = False

    def __post_init__(self):
        if self.mode not in ("absolute", "delta"):
            raise ProtocolError(f"unknown action mode {self.mode!r}")
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.joints)):
            raise ProtocolError("action joints must be finite")

    @classmethod
    def from_dict(cls, rec: dict) -> "ActionMessage":
        if rec.get("type") != "act":
            raise ProtocolError(f"expected act message, got {rec.get('type')!r}")
        try:
            return cls(mode=rec["mode"], joints=rec["joints"],
                       done=bool(rec.get("done", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed act message: {exc}") from exc


@dataclass
class EpisodeConfig:
    scene: GaussianScene            # labeled; drive_scene canonical source
    chain: MdhChain
    camera: CameraModel
    initial: JointState
    canonical: Optional[JointState] = None
    step_budget: int = 100
    workspace: Optional[WorkspaceBox] = None
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    object_poses: dict[str, SimilarityTransform] = field(default_factory=dict)

    def __post_init__(self):
        if self.step_budget < 1:
            raise ValueError("step_budget must be >= 1")
        if len(self.initial) != self.chain.joint_count:
            raise ValueError("initial state length != chain joint count")
        if self.canonical is None:
            self.canonical = self.chain.zero_state()


@dataclass
class EpisodeState:
    step: int
    joint_state: JointState
    terminated: bool = False
    reason: Optional[str] = None


@dataclass
class StepResult:
    state: EpisodeState
    image: Optional[np.ndarray]     # rendered rgb when the step applied


def initial_state(config: EpisodeConfig) -> EpisodeState:
    return EpisodeState(step=0, joint_state=config.initial)


def render_observation(config: EpisodeConfig, state: EpisodeState) -> np.ndarray:
    scene = drive_scene(config.scene, config.chain, config.canonical,
                        state.joint_state)
    return render(scene, config.camera, background=config.background).rgb


def step(config: EpisodeConfig, state: EpisodeState,
         action: ActionMessage) -> StepResult:
    """Apply one action. Checks run before mutation: a violating target
    terminates the episode with the state frozen at the pre-step values."""
    if state.terminated:
        raise ValueError("episode already terminated")
    if action.done:
        return StepResult(
            state=replace(state, terminated=True, reason="done"), image=None)
    if len(action.joints) != config.chain.joint_count:
        raise ProtocolError(
            f"action has {len(action.joints)} joints, chain has "
            f"{config.chain.joint_count}")

    if action.mode == "delta":
        target = JointState(state.joint_state.angles + action.joints)
    else:
        target = JointState(action.joints)

    if config.chain.limit_violations(target):
        return StepResult(
            state=replace(state, terminated=True, reason="limit_violation"),
            image=None)
    if config.workspace is not None:
        effector = forward_kinematics(config.chain, target)[-1].translation
        if not config.workspace.contains(effector):
            return StepResult(
                state=replace(state, terminated=True,
                              reason="workspace_violation"),
                image=None)

    new_state = EpisodeState(step=state.step + 1, joint_state=target)
    if new_state.step >= config.step_budget:
        new_state = replace(new_state, terminated=True, reason="step_budget")
        return StepResult(state=new_state, image=None)
    return StepResult(state=new_state,
                      image=render_observation(config, new_state))


def observation_message(config: EpisodeConfig, state: EpisodeState,
                        image: np.ndarray) -> dict:
    return {
        "type": "obs",
        "step": state.step,
        "joint_state": state.joint_state.angles.tolist(),
        "object_poses": {
            name: t.matrix.reshape(-1).tolist()
            for name, t in sorted(config.object_poses.items())
        },
        "image": base64.b64encode(encode_png(image)).decode("ascii"),
        "width": config.camera.width,
        "height": config.camera.height,
    }


def end_message(reason: str, steps: int, detail: Optional[str] = None) -> dict:
    msg = {"type": "end", "reason": reason, "steps": steps}
    if detail:
        msg["detail"] = detail
    return msg


def decode_observation_image(message: dict) -> np.ndarray:
    from .images import decode_png

    return decode_png(base64.b64decode(message["image"]))


# ---------------------------------------------------------------------------
# server
# ---------------------------------------------------------------------------

class _Transcript:
    def __init__(self, path: Optional[str]):
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def log(self, direction: str, message: dict) -> None:
        if self._fh is not None:
            row = {"t": time.time(), "dir": direction, "msg": message}
            self._fh.write(json.dumps(row, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def run_episode(conn: socket.socket, config: EpisodeConfig,
                transcript_path: Optional[str] = None) -> EpisodeState:
    """Drive one connection through one episode; returns the final state."""
    transcript = _Transcript(transcript_path)
    state = initial_state(config)
    try:
        obs = observation_message(config, state,
                                  render_observation(config, state))
        send_message(conn, obs)
        transcript.log("send", obs)
        while not state.terminated:
            try:
                incoming = recv_message(conn)
            except ProtocolError as exc:
                state = replace(state, terminated=True, reason="client_error")
                end = end_message("client_error", state.step, detail=str(exc))
                transcript.log("send", end)
                try:
                    send_message(conn, end)
                except OSError:
                    pass
                break
            if incoming is None:
                state = replace(state, terminated=True, reason="client_error")
                transcript.log(
                    "send", end_message("client_error", state.step,
                                        detail="client disconnected"))
                break
            transcript.log("recv", incoming)
            try:
                action = ActionMessage.from_dict(incoming)
                result = step(config, state, action)
            except ProtocolError as exc:
                state = replace(state, terminated=True, reason="client_error")
                end = end_message("client_error", state.step, detail=str(exc))
                send_message(conn, end)
                transcript.log("send", end)
                break
            state = result.state
            if state.terminated:
                end = end_message(state.reason, state.step)
                send_message(conn, end)
                transcript.log("send", end)
            else:
                obs = observation_message(config, state, result.image)
                send_message(conn, obs)
                transcript.log("send", obs)
    finally:
        transcript.close()
    return state


class EvaluatorServer:
    """One episode per connection, connections served sequentially.

    start()/stop() run the accept loop on a background thread (port 0 picks
    a free port; the bound address is `.address` after start). serve_forever
    blocks the calling thread instead.
    """

    def __init__(self, config: EpisodeConfig, host: str = "127.0.0.1",
                 port: int = 0, transcript_dir: Optional[str] = None):
        self.config = config
        self.host = host
        self.port = port
        self.transcript_dir = transcript_dir
        self.address: Optional[tuple[str, int]] = None
        self._sock: Optional[socket.socket] = None
        self._thread: Optional[threading.Thread] = None
        self._stopping = threading.Event()
        self._episode_count = 0

    def _bind(self) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.host, self.port))
        self._sock.listen(1)
        self.address = self._sock.getsockname()[:2]
        if self.transcript_dir:
            os.makedirs(self.transcript_dir, exist_ok=True)

    def _transcript_path(self) -> Optional[str]:
        if not self.transcript_dir:
            return None
        return os.path.join(self.transcript_dir,
                            f"episode_{self._episode_count:04d}.jsonl")

    def _loop(self, max_episodes: Optional[int]) -> None:
        assert self._sock is not None
        self._sock.settimeout(0.2)
        while not self._stopping.is_set():
            if max_episodes is not None and self._episode_count >= max_episodes:
                break
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with conn:
                conn.settimeout(60.0)
                try:
                    run_episode(conn, self.config, self._transcript_path())
                except OSError:
                    pass
            self._episode_count += 1

    def start(self) -> None:
        self._bind()
        self._thread = threading.Thread(target=self._loop, args=(None,),
                                        daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stopping.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def serve_forever(self, max_episodes: Optional[int] = None) -> None:
        self._bind()
        try:
            self._loop(max_episodes)
        finally:
            self._sock.close()
            self._sock = None


# ---------------------------------------------------------------------------
# episode config files
# ---------------------------------------------------------------------------

def episode_config_from_dict(rec: dict, base_dir: str = ".") -> EpisodeConfig:
    """Build an EpisodeConfig from a JSON record naming the scene, labels,
    chain, camera, initial/canonical states, budget, and workspace box."""
    from .kinematics import bind_labels, load_chain_file
    from .rasterizer import camera_from_dict
    from .splats import load_labels, load_splat_file

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    try:
        scene = load_splat_file(resolve(rec["scene"]))
        chain = load_chain_file(resolve(rec["chain"]))
        scene = bind_labels(scene, load_labels(resolve(rec["labels"])),
                            chain.joint_count)
        camera = camera_from_dict(rec["camera"])
        workspace = None
        if rec.get("workspace") is not None:
            workspace = WorkspaceBox(lower=rec["workspace"]["lower"],
                                     upper=rec["workspace"]["upper"])
        object_poses = {
            str(name): SimilarityTransform(
                np.asarray(mat, dtype=np.float64).reshape(4, 4))
            for name, mat in rec.get("object_poses", {}).items()
        }
        canonical = rec.get("canonical")
        return EpisodeConfig(
            scene=scene,
            chain=chain,
            camera=camera,
            initial=JointState(np.asarray(rec["initial"], dtype=np.float64)),
            canonical=None if canonical is None
            else JointState(np.asarray(canonical, dtype=np.float64)),
            step_budget=int(rec.get("step_budget", 100)),
            workspace=workspace,
            background=tuple(rec.get("background", (0.0, 0.0, 0.0))),
            object_poses=object_poses,
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"invalid episode config: {exc}") from exc


def load_episode_file(path) -> EpisodeConfig:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    return episode_config_from_dict(
        rec, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# transcript-driven replay (determinism oracle)
# ---------------------------------------------------------------------------

def load_transcript(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def transcript_actions(rows: list[dict]) -> list[ActionMessage]:
    return [ActionMessage.from_dict(row["msg"]) for row in rows
            if row["dir"] == "recv" and row["msg"].get("type") == "act"]


def replay_transcript(config: EpisodeConfig, rows: list[dict]) -> list[dict]:
    """Re-run a transcript's action sequence through a fresh episode and
    return the sequence of messages the server would send. Byte-identical
    payloads to the recorded run given the same config."""
    state = initial_state(config)
    sent = [observation_message(config, state,
                                render_observation(config, state))]
    for action in transcript_actions(rows):
        result = step(config, state, action)
        state = result.state
        if state.terminated:
            sent.append(end_message(state.reason, state.step))
            break
        sent.append(observation_message(config, state, result.image))
    return sent
