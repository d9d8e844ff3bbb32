"""Adversarial scenario runner and security-property checkers.

``run_scenario`` drives a full onboarding (plus optional data reports and
revocation) through the public channel under a chosen adversary strategy,
producing a deterministic trace for a given seed. Three checkers then decide
the protocol's core properties over that trace and the adversary's derived
knowledge:

* authentication  - registration success implies a prior validated request
                    covering the same token and nonce;
* token integrity - one transient token never activates two device ids;
* key confidentiality - device-side secrets and the activation payload stay
                    outside the adversary's derivation closure.

A randomized campaign samples thousands of interleavings; a bounded
exhaustive mode enumerates the full decision tree for short scenarios. Both
are sampling substitutes for exhaustive symbolic search: they refute, they
do not prove.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import channels as ch
from . import crypto, ledger, risk, wire
from .channels import (
    AdversaryAction,
    AdversaryKnowledge,
    DeliverAll,
    PublicChannel,
    Randomized,
    Scripted,
    SecureChannel,
    Term,
    Trace,
    derive_closure,
    kem_secret,
    sig_secret,
    sym_secret,
)
from .roles import (
    Authenticator,
    Device,
    DevicePhase,
    Outgoing,
    ProtocolError,
    Server,
    bundle_atom,
    deliver_token,
    establish_session,
    provision_device,
    token_secret,
)
from .runtime import Rng, SimClock, seeded_rng

STEP_DT = 0.1          # simulated seconds per adversary action
PHASE_DT = 1.0         # simulated seconds between scenario phases


class ScenarioInvalid(Exception):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    devices: int = 1
    reports: tuple[tuple[str, float, str], ...] = (("temperature_c", 21.5, "C"),)
    revoke: bool = False
    retries: int = 1
    totp_step: int = 30
    key_ttl: float = 86_400.0
    kem_algo: str = crypto.DEFAULT_KEM
    mu: float = 200.0
    max_block_txs: int = 50
    block_interval: float = 0.1
    api_address: str = "https://home.example/api"

    def validate(self) -> None:
        if self.devices < 1:
            raise ScenarioInvalid("scenario needs at least one device")
        if self.totp_step <= 0 or self.key_ttl <= 0:
            raise ScenarioInvalid("durations must be positive")


def load_scenario(path: str) -> ScenarioSpec:
    with open(path) as fh:
        raw = json.load(fh)
    known = set(ScenarioSpec.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ScenarioInvalid(f"unknown scenario keys: {sorted(unknown)}")
    if "reports" in raw:
        raw["reports"] = tuple((m, float(v), u) for m, v, u in raw["reports"])
    try:
        spec = ScenarioSpec(**raw)
    except TypeError as exc:
        raise ScenarioInvalid(str(exc)) from exc
    spec.validate()
    return spec


class World:
    """Everything one scenario run touches, built deterministically from a seed."""

    def __init__(self, spec: ScenarioSpec, seed: int,
                 rules: list[risk.ThresholdRule] | None = None,
                 direct: bool = False):
        spec.validate()
        self.spec = spec
        self.seed = seed
        self.direct = direct  # bypass adversary custody (reference wiring)
        self._direct_queue: list[tuple[str, bytes, str]] = []
        self.rng = seeded_rng(seed)
        self.clock = SimClock()
        self.trace = Trace()
        self.knowledge = AdversaryKnowledge()
        self.h_p = PublicChannel(self.knowledge)
        self.adv_rng = self.rng.child("adversary")

        membership = ledger.MembershipRegistry()
        org_rng = self.rng.child("orgs")
        self.orgs = {}
        for org_id, role in (("server-org", ledger.OrgRole.SERVER),
                             ("risk-engine", ledger.OrgRole.RISK_ENGINE)):
            cred = crypto.sig_keygen(crypto.RoleTag.ORG_CREDENTIAL,
                                     10 * 365 * 86_400.0, org_rng,
                                     self.clock.now())
            self.orgs[org_id] = ledger.OrgIdentity(org_id, role, cred)
            membership.register(self.orgs[org_id])
        self.network = ledger.LedgerNetwork(
            membership, mu=spec.mu, max_block_txs=spec.max_block_txs,
            block_interval=spec.block_interval)
        self.risk_engine = risk.RiskEngine(
            rules if rules is not None else list(risk.DEFAULT_RULES),
            self.orgs["risk-engine"])
        self.risk_engine.attach(self.network)

        self.server = Server(self.rng.child("server"), self.clock, self.trace,
                             network=self.network, identity=self.orgs["server-org"],
                             api_address=spec.api_address, kem_algo=spec.kem_algo,
                             key_ttl=spec.key_ttl, totp_step=spec.totp_step)
        self.auths: list[Authenticator] = []
        self.devices: list[Device] = []
        self.h_s: dict[str, SecureChannel] = {}
        self.link_keys: list[crypto.LinkKey] = []
        for i in range(spec.devices):
            auth = Authenticator(self.rng.child(f"auth-{i}"), self.clock,
                                 self.trace, name=f"auth-{i}",
                                 kem_algo=spec.kem_algo, key_ttl=spec.key_ttl)
            link = crypto.gen_link_key(self.rng.child(f"link-{i}"))
            device = Device(self.rng.child(f"device-{i}"), self.clock, self.trace,
                            link, name=f"device-{i}", kem_algo=spec.kem_algo,
                            key_ttl=spec.key_ttl, max_retries=spec.retries)
            auth.provision_link_key(device.name, link)
            self.auths.append(auth)
            self.devices.append(device)
            self.link_keys.append(link)
            self.h_s[auth.name] = SecureChannel(auth.name, "server")
        self.session_of: dict[str, Authenticator] = {}
        self.device_by_name = {d.name: d for d in self.devices}

    # -- routing ---------------------------------------------------------------

    def send_outgoing(self, out: Outgoing) -> None:
        if out.path == "public":
            if self.direct:
                # Direct wiring is still a wire: FIFO, just adversary-free.
                self._direct_queue.append((out.dst, wire.encode(out.message),
                                           out.src))
                return
            self.h_p.send(out.src, out.dst, wire.encode(out.message),
                          out.term, type(out.message).__name__)
        else:
            auth = self.session_of.get(out.dst)
            if auth is None:
                return
            try:
                if isinstance(out.message, wire.ConnectedNotice):
                    auth.handle_connected_notice(out.message)
            except (ProtocolError, crypto.CryptoError):
                pass

    def dispatch(self, dst: str, data: bytes, reply_to: str) -> None:
        try:
            message = wire.decode(data)
        except wire.WireError as exc:
            self.trace.record(dst, ch.MESSAGE_REJECTED, error="Malformed",
                              detail=type(exc).__name__)
            return
        try:
            if dst == "server":
                if isinstance(message, wire.RegistrationRequest):
                    for out in self.server.handle_registration(message, reply_to):
                        self.send_outgoing(out)
                elif isinstance(message, wire.DataReport):
                    self.server.handle_data_report(message)
                else:
                    self.trace.record(dst, ch.MESSAGE_REJECTED,
                                      error="Malformed",
                                      detail=type(message).__name__)
            elif dst in self.device_by_name:
                device = self.device_by_name[dst]
                if isinstance(message, wire.ActivationResponse):
                    device.handle_activation(message)
                else:
                    self.trace.record(dst, ch.MESSAGE_REJECTED,
                                      error="Malformed",
                                      detail=type(message).__name__)
            # Anything addressed elsewhere (e.g. back at the adversary) vanishes.
        except (ProtocolError, crypto.CryptoError):
            pass  # the role already traced its own rejection

    def execute(self, act: AdversaryAction) -> None:
        self.clock.advance(STEP_DT)
        self.trace.record("adversary", ch.ADVERSARY_ACTION, act=act.describe())
        if act.action == "deliver":
            entry = self.h_p.take(act.index)
            self.dispatch(entry.dst, entry.data, entry.src)
        elif act.action == "drop":
            self.h_p.take(act.index)
        elif act.action == "replay":
            entry = self.h_p.take(act.index)
            self.dispatch(entry.dst, entry.data, entry.src)
            if entry.replays_left > 0:
                copy = self.h_p.send(entry.src, entry.dst, entry.data,
                                     entry.term, entry.kind)
                copy.replays_left = entry.replays_left - 1
        elif act.action == "tamper":
            entry = self.h_p.take(act.index)
            mutated = bytearray(entry.data)
            bit = act.bit % (len(mutated) * 8)
            mutated[bit // 8] ^= 1 << (bit % 8)
            self.knowledge.observe(data=bytes(mutated))
            self.dispatch(entry.dst, bytes(mutated), entry.src)
        elif act.action == "delay":
            entry = self.h_p.take(act.index)
            self.clock.advance(act.bit or 0)  # bit field reused as seconds
            self.dispatch(entry.dst, entry.data, entry.src)
        elif act.action == "inject":
            self.dispatch(act.dst, act.data, "adversary")
        else:
            raise ScenarioInvalid(f"unknown adversary action {act.action!r}")

    def pump(self, strategy) -> None:
        """Run adversary decisions (and device retries) to quiescence."""
        while True:
            if self.direct:
                if not self._direct_queue:
                    return
                dst, data, src = self._direct_queue.pop(0)
                self.dispatch(dst, data, src)
                continue
            act = strategy.decide(self.h_p, self.adv_rng)
            if act is not None:
                self.execute(act)
                continue
            retried = False
            for device in self.devices:
                if device.wants_retry():
                    out = device.retry_request()
                    self.send_outgoing(out)
                    retried = True
            if not retried:
                return

    # -- protected secrets -------------------------------------------------------

    def protected_terms(self) -> set[Term]:
        terms: set[Term] = set()
        for device in self.devices:
            if device.keys is not None:
                terms.add(kem_secret(device.keys.kem.key_id))
                terms.add(sig_secret(device.keys.sig.key_id))
        for entry in self.server.registry.values():
            terms.add(kem_secret(entry.server_keys.kem.key_id))
            # The activation payload as a structured term, plus the long-lived
            # token inside it. Its public-key atom is deliberately NOT here:
            # public keys sit in the adversary's base knowledge.
            terms.add(entry.activation_term)
            terms.add(entry.activation_term.items[0])
        for link in self.link_keys:
            terms.add(sym_secret(link.key_id))
        return terms

    def grant_public_atoms(self) -> None:
        """Public keys are public: hand every bundle atom to the adversary."""
        for auth in self.auths:
            if auth.keys is not None:
                self.knowledge.grant(bundle_atom(auth.keys.public))
        for device in self.devices:
            if device.keys is not None:
                self.knowledge.grant(bundle_atom(device.keys.public))
        for session in self.server.sessions.values():
            self.knowledge.grant(bundle_atom(session.keys.public))
        for entry in self.server.registry.values():
            self.knowledge.grant(bundle_atom(entry.server_keys.public))


@dataclass
class RunResult:
    world: World
    trace: Trace
    knowledge: AdversaryKnowledge
    protected: set[Term]

    def closure(self) -> AdversaryKnowledge:
        return derive_closure(self.knowledge)


def forge_registration(world: World) -> bytes | None:
    """A concrete injection: a registration request built entirely from the
    adversary's own keys. The server must refuse its signature."""
    device = world.devices[0]
    if device.server_public is None:
        return None
    now = world.clock.now()
    rng = world.adv_rng.child("forge")
    keys = crypto.generate_role_keys(crypto.RoleTag.DEVICE_FOR_SERVER,
                                     world.spec.key_ttl, rng, now,
                                     kem_algo=world.spec.kem_algo)
    sig_keys = crypto.sig_keygen(crypto.RoleTag.AUTH_FOR_SERVER,
                                 world.spec.key_ttl, rng, now)
    fake_token = crypto.hybrid_encrypt(device.server_public.kem, b"00000000",
                                       rng, now)
    fake_sig = crypto.sign(sig_keys, wire.encode_hybrid(fake_token), now)
    payload = wire.encode_registration_payload(keys.public, rng.bytes(16),
                                               fake_token, fake_sig)
    ct = crypto.hybrid_encrypt(device.server_public.kem, payload, rng, now)
    return wire.encode(wire.RegistrationRequest(ct))


def run_scenario(spec: ScenarioSpec, adversary, seed: int,
                 rules: list[risk.ThresholdRule] | None = None,
                 prepare=None) -> RunResult:
    """Run one scenario under an adversary strategy.

    ``adversary`` is a strategy object, or a callable ``world -> strategy``
    for strategies that need run context (forged injections). ``prepare``
    runs after provisioning and may add scripted rules. Deterministic: the
    same (spec, adversary, seed) produces a byte-identical trace.
    """
    direct = adversary is None
    world = World(spec, seed, rules=rules, direct=direct)
    strategy = DeliverAll() if direct else (
        adversary(world) if callable(adversary) else adversary)

    for auth, device in zip(world.auths, world.devices):
        h_s = world.h_s[auth.name]
        session_id = establish_session(auth, world.server, h_s)
        world.session_of[session_id] = auth
        world.clock.advance(PHASE_DT)
        deliver_token(auth, world.server, session_id, h_s)
        reg = world.server.pending[-1]
        provision_device(auth, device,
                         token_term=token_secret(session_id, reg.issued_digits))
        world.clock.advance(PHASE_DT)

    if prepare is not None:
        prepare(world, strategy)

    for device in world.devices:
        world.send_outgoing(device.build_registration_request())
    world.pump(strategy)

    world.clock.advance(PHASE_DT)
    for device in world.devices:
        if device.phase is DevicePhase.ACTIVE:
            for metric, value, unit in spec.reports:
                world.send_outgoing(device.build_data_report(metric, value, unit))
    world.pump(strategy)

    if spec.revoke:
        world.clock.advance(PHASE_DT)
        for auth, device in zip(world.auths, world.devices):
            if device.uid.hex in world.server.registry:
                try:
                    world.server.handle_revocation(
                        auth.build_revocation(device.uid.hex))
                except (ProtocolError, crypto.CryptoError):
                    pass
        world.pump(strategy)

    world.network.settle()
    world.grant_public_atoms()
    return RunResult(world=world, trace=world.trace, knowledge=world.knowledge,
                     protected=world.protected_terms())


# ---------------------------------------------------------------------------
# Property checkers
# ---------------------------------------------------------------------------

AUTHENTICATION = "Authentication"
TOKEN_INTEGRITY = "TokenIntegrity"
KEYPAIR_CONFIDENTIALITY = "KeypairConfidentiality"


@dataclass(frozen=True)
class LemmaVerdict:
    lemma: str
    holds: bool
    witness: str | None = None  # offending trace slice, present iff violated

    def __post_init__(self):
        if self.holds and self.witness is not None:
            raise ValueError("a holding verdict carries no witness")
        if not self.holds and self.witness is None:
            raise ValueError("a violation needs a witness")


def check_authentication(trace: Trace) -> LemmaVerdict:
    """Every registration success has a strictly earlier accepted request
    covering the same token and nonce."""
    accepted = trace.by_kind(ch.DEVICE_REQUEST_ACCEPTED)
    for success in trace.by_kind(ch.REGISTRATION_SUCCESS):
        ok = any(a.time < success.time
                 and a.get("token") == success.get("token")
                 and a.get("nonce") == success.get("nonce")
                 for a in accepted)
        if not ok:
            return LemmaVerdict(AUTHENTICATION, False,
                                witness=f"unvalidated success: {success.render()}")
    return LemmaVerdict(AUTHENTICATION, True)


def check_token_integrity(trace: Trace) -> LemmaVerdict:
    """Accepted requests sharing (token, nonce, signature) agree on the device id."""
    seen: dict[tuple, ch.TraceEvent] = {}
    for event in trace.by_kind(ch.DEVICE_REQUEST_ACCEPTED):
        key = (event.get("token"), event.get("nonce"), event.get("sig"))
        prior = seen.get(key)
        if prior is not None and prior.get("uid") != event.get("uid"):
            return LemmaVerdict(
                TOKEN_INTEGRITY, False,
                witness=f"one token, two devices: {prior.render()} / {event.render()}")
        seen.setdefault(key, event)
    return LemmaVerdict(TOKEN_INTEGRITY, True)


def check_keypair_confidentiality(knowledge: AdversaryKnowledge,
                                  protected: set[Term]) -> LemmaVerdict:
    """No protected secret or the activation payload is derivable."""
    closure = derive_closure(knowledge)
    leaked = protected & closure.terms
    if leaked:
        labels = sorted(getattr(t, "label", repr(t)) for t in leaked)
        return LemmaVerdict(KEYPAIR_CONFIDENTIALITY, False,
                            witness=f"derivable secrets: {labels}")
    return LemmaVerdict(KEYPAIR_CONFIDENTIALITY, True)


def check_all(result: RunResult) -> dict[str, LemmaVerdict]:
    return {
        AUTHENTICATION: check_authentication(result.trace),
        TOKEN_INTEGRITY: check_token_integrity(result.trace),
        KEYPAIR_CONFIDENTIALITY: check_keypair_confidentiality(
            result.knowledge, result.protected),
    }


# ---------------------------------------------------------------------------
# Attack script library
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackScript:
    name: str
    description: str
    expected_error: str | None      # rejection code the server must record
    rules: tuple[dict, ...] = ()
    needs_forge: str | None = None  # "reuse-token" | "own-keys"
    retries: int = 0


ATTACK_SCRIPTS: dict[str, AttackScript] = {
    "replay-device-request": AttackScript(
        "replay-device-request",
        "deliver the registration request twice; the token is single-use",
        expected_error="TokenUnknown",
        rules=({"on": 0, "action": "replay"},),
    ),
    "replay-stale-token": AttackScript(
        "replay-stale-token",
        "withhold the registration request past the 30 s token step",
        expected_error="TokenExpired",
        rules=({"on": 0, "action": "delay", "seconds": 40},),
    ),
    "tamper-ciphertext-bit": AttackScript(
        "tamper-ciphertext-bit",
        "flip one ciphertext bit in transit; authenticated encryption catches it",
        expected_error="Malformed",
        rules=({"on": 0, "action": "tamper", "bit": 900},),
    ),
    "token-swap-across-devices": AttackScript(
        "token-swap-across-devices",
        "present a consumed token under a second device identity "
        "(provision material leaked to the adversary by fiat)",
        expected_error="TokenUnknown",
        needs_forge="reuse-token",
    ),
    "inject-forged-registration": AttackScript(
        "inject-forged-registration",
        "inject a registration signed by the adversary's own key",
        expected_error="SignatureInvalid",
        needs_forge="own-keys",
    ),
    "drop-activation": AttackScript(
        "drop-activation",
        "drop the activation response: server-side active, device stalls "
        "(documented divergence; no retry in this script)",
        expected_error=None,
        rules=({"on": 1, "action": "drop"},),
    ),
}


@dataclass
class AttackOutcome:
    name: str
    defeated: bool
    error_seen: str | None
    detail: str
    verdicts: dict[str, LemmaVerdict]
    result: RunResult


def _forge_reuse_token(world: World) -> bytes:
    """Compromised-device fixture: reuse the honest device's (encrypted token,
    signature) under a fresh pseudo-identity."""
    device = world.devices[0]
    rng = world.adv_rng.child("swap")
    now = world.clock.now()
    keys = crypto.generate_role_keys(crypto.RoleTag.DEVICE_FOR_SERVER,
                                     world.spec.key_ttl, rng, now,
                                     kem_algo=world.spec.kem_algo)
    payload = wire.encode_registration_payload(
        keys.public, rng.bytes(16), device._encrypted_token,
        device._token_signature)
    ct = crypto.hybrid_encrypt(device.server_public.kem, payload, rng, now)
    return wire.encode(wire.RegistrationRequest(ct))


def run_attack(name: str, seed: int = 7) -> AttackOutcome:
    try:
        script = ATTACK_SCRIPTS[name]
    except KeyError:
        raise ScenarioInvalid(
            f"unknown attack script {name!r}; known: {sorted(ATTACK_SCRIPTS)}"
        ) from None
    spec = ScenarioSpec(devices=1, reports=(), retries=script.retries)
    strategy = _ScriptedWithDelay([dict(r) for r in script.rules])

    def prepare(world: World, strat: _ScriptedWithDelay) -> None:
        # Forged payloads need provisioned state, so they are built here.
        if script.needs_forge == "own-keys":
            strat.rules[0] = {"on": 0, "action": "inject", "dst": "server",
                              "data": forge_registration(world)}
        elif script.needs_forge == "reuse-token":
            strat.rules[1] = {"on": 1, "action": "inject", "dst": "server",
                              "data": _forge_reuse_token(world)}

    result = run_scenario(spec, strategy, seed, prepare=prepare)
    verdicts = check_all(result)
    rejected = result.trace.by_kind(ch.DEVICE_REQUEST_REJECTED)
    error_seen = None
    if script.expected_error is not None:
        for event in rejected:
            if event.get("error") == script.expected_error:
                error_seen = script.expected_error
                break
    honest_uids = {d.uid.hex for d in result.world.devices}
    successes = result.trace.by_kind(ch.REGISTRATION_SUCCESS)
    foreign_success = [e for e in successes if e.get("uid") not in honest_uids]
    lemmas_hold = all(v.holds for v in verdicts.values())
    if script.expected_error is None:
        device = result.world.devices[0]
        diverged = (device.phase is DevicePhase.REQUEST_SENT
                    and device.uid.hex in result.world.server.registry)
        defeated = lemmas_hold and not foreign_success
        detail = ("activation withheld: device stalled in request_sent, "
                  "server registry active (documented divergence)"
                  if diverged else "no divergence observed")
    else:
        defeated = (error_seen is not None and not foreign_success
                    and lemmas_hold)
        detail = (f"rejected: {_REJECTION_DETAIL.get(name, script.expected_error)}"
                  if defeated else "attack was not rejected as expected")
    return AttackOutcome(name=name, defeated=defeated, error_seen=error_seen,
                         detail=detail, verdicts=verdicts, result=result)


_REJECTION_DETAIL = {
    "replay-device-request": "token consumed",
    "replay-stale-token": "token expired",
    "tamper-ciphertext-bit": "ciphertext rejected",
    "token-swap-across-devices": "token consumed",
    "inject-forged-registration": "signature invalid",
}


def load_attack_rules(path: str) -> list[dict]:
    """Load a declarative adversary script: a JSON list of
    {"on": <public message index>, "action": <name>, ...params} rules."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ScenarioInvalid("attack script file must hold a JSON list")
    known = {"deliver", "drop", "replay", "tamper", "delay", "inject"}
    for i, rule in enumerate(raw):
        if not isinstance(rule, dict) or "on" not in rule or "action" not in rule:
            raise ScenarioInvalid(f"rule {i}: needs 'on' and 'action'")
        if rule["action"] not in known:
            raise ScenarioInvalid(f"rule {i}: unknown action {rule['action']!r}")
        if rule["action"] == "inject":
            if "data_hex" not in rule or "dst" not in rule:
                raise ScenarioInvalid(f"rule {i}: inject needs 'dst' and 'data_hex'")
            rule["data"] = bytes.fromhex(rule.pop("data_hex"))
    return raw


def run_script_file(path: str, seed: int = 7,
                    spec: ScenarioSpec | None = None) -> tuple[RunResult, dict]:
    """Run a user-supplied adversary script against a scenario; returns the
    run and its property verdicts."""
    rules = load_attack_rules(path)
    spec = spec or ScenarioSpec(devices=1, reports=(), retries=0)
    result = run_scenario(spec, _ScriptedWithDelay(rules), seed)
    return result, check_all(result)


class _ScriptedWithDelay(Scripted):
    """Scripted strategy whose delay rules carry seconds in the bit field."""

    def decide(self, channel: PublicChannel, rng: Rng) -> AdversaryAction | None:
        if not channel.pending:
            return None
        entry = channel.pending[0]
        rule = self.rules.pop(entry.index, None)
        if rule is None:
            return AdversaryAction("deliver", index=entry.index)
        action = rule["action"]
        if action == "delay":
            return AdversaryAction("delay", index=entry.index,
                                   bit=int(rule.get("seconds", 40)))
        if action == "inject":
            return AdversaryAction("inject", dst=rule["dst"], data=rule["data"],
                                   index=entry.index)
        if action == "tamper":
            return AdversaryAction("tamper", index=entry.index,
                                   bit=int(rule.get("bit", 0)))
        return AdversaryAction(action, index=entry.index)


# ---------------------------------------------------------------------------
# Randomized campaign
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CampaignRecord:
    seed: int
    holds: dict[str, bool]
    trace_digest: str

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "holds": self.holds,
                           "trace": self.trace_digest}, sort_keys=True)


@dataclass
class CampaignResult:
    runs: int
    violations: list[tuple[int, LemmaVerdict]]
    records: list[CampaignRecord]

    @property
    def clean(self) -> bool:
        return not self.violations


def campaign_spec() -> ScenarioSpec:
    return ScenarioSpec(devices=1, reports=(("temperature_c", 21.5, "C"),),
                        retries=1)


def run_campaign(runs: int, base_seed: int = 1,
                 weights: dict[str, float] | None = None,
                 spec: ScenarioSpec | None = None,
                 keep_records: bool = True) -> CampaignResult:
    """Randomized adversarial campaign: distinct seeds, mixed action weights,
    all three checkers per run."""
    spec = spec or campaign_spec()
    violations: list[tuple[int, LemmaVerdict]] = []
    records: list[CampaignRecord] = []
    for i in range(runs):
        seed = base_seed + i
        result = run_scenario(
            spec,
            lambda world: Randomized(weights=weights, budget=48,
                                     forge=lambda k, rng: forge_registration(world)),
            seed)
        verdicts = check_all(result)
        for verdict in verdicts.values():
            if not verdict.holds:
                violations.append((seed, verdict))
        if keep_records:
            records.append(CampaignRecord(
                seed=seed,
                holds={k: v.holds for k, v in verdicts.items()},
                trace_digest=result.trace.digest()))
    return CampaignResult(runs=runs, violations=violations, records=records)


# ---------------------------------------------------------------------------
# Bounded exhaustive mode
# ---------------------------------------------------------------------------

class _SequenceStrategy:
    """Follows a fixed action sequence, then withholds everything."""

    def __init__(self, sequence: tuple[str, ...]):
        self.sequence = list(sequence)
        self.exhausted_with_pending = False

    def decide(self, channel: PublicChannel, rng: Rng) -> AdversaryAction | None:
        if not channel.pending:
            return None
        if not self.sequence:
            self.exhausted_with_pending = True
            return None
        action = self.sequence.pop(0)
        entry = channel.pending[0]
        if action == "replay" and entry.replays_left <= 0:
            action = "deliver"
        if action == "tamper":
            return AdversaryAction("tamper", index=entry.index, bit=13)
        return AdversaryAction(action, index=entry.index)


BOUNDED_ACTIONS = ("deliver", "drop", "replay")
MAX_PUBLIC_MESSAGES = 12


def bounded_exhaustive(spec: ScenarioSpec, seed: int = 7,
                       actions: tuple[str, ...] = BOUNDED_ACTIONS,
                       max_runs: int = 20_000) -> list[tuple[tuple[str, ...], dict]]:
    """Enumerate every adversary decision tree over a restricted action set.

    The adversary always acts on the oldest custody message and may stop at
    any point (withholding the rest), so each prefix is itself a complete
    run. Only tractable for short scenarios; refuses anything wider than
    ``MAX_PUBLIC_MESSAGES`` public messages per branch.
    """
    results = []
    stack: list[tuple[str, ...]] = [()]
    runs = 0
    while stack:
        prefix = stack.pop()
        if runs >= max_runs:
            raise ScenarioInvalid(
                f"bounded exhaustive exceeded {max_runs} runs; restrict the scenario")
        strategy = _SequenceStrategy(prefix)
        result = run_scenario(spec, strategy, seed)
        runs += 1
        if len(prefix) > MAX_PUBLIC_MESSAGES:
            raise ScenarioInvalid(
                "scenario produces more public messages than bounded mode allows")
        verdicts = check_all(result)
        results.append((prefix, verdicts))
        if strategy.exhausted_with_pending:
            for action in actions:
                stack.append(prefix + (action,))
    return results
