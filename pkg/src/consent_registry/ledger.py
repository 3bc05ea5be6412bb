"""Deterministic single-node ledger.

Accounts hold token balances, contracts hold word-addressed storage and run
native handler classes registered by name, and every transaction is metered
in gas. Transactions execute one at a time; a handler's storage writes and
events are buffered in an :class:`ExecutionContext` and committed together,
or dropped together when the handler fails.
"""

import dataclasses
import enum
import hashlib
import json
import logging
import os
import struct
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Type,
    Union,
)

import numpy as np

from consent_registry.constants import (
    ADDRESS_SIZE,
    FEE_SINK_ADDRESS,
    MAX_EVENT_TOPICS,
    TOPIC_SIZE,
    WORD_SIZE,
)
from consent_registry.errors import (
    ConfigurationError,
    CorruptionError,
    HandlerError,
    InsufficientFundsError,
    InvalidInputError,
    NotFoundError,
    RegistryError,
)

logger = logging.getLogger(__name__)

SLOT_LIMIT = 1 << (8 * WORD_SIZE)
WORD_MIN = -(1 << (8 * WORD_SIZE - 1))
WORD_MAX = (1 << (8 * WORD_SIZE - 1)) - 1


@dataclass(frozen=True)
class GasSchedule:
    """Gas charged per metered action."""

    tx_base: int = 21000
    storage_write_new: int = 20000
    storage_write_update: int = 5000
    log_base: int = 375
    log_per_topic: int = 375
    log_per_byte: int = 8
    calldata_per_byte: int = 16
    compute_per_distance_op: int = 50

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise InvalidInputError(
                    f"Gas cost {f.name} must be a non-negative integer, got {value!r}."
                )

    def calldata_cost(self, size: int) -> int:
        """
        Gas for call arguments.

        :param size: argument length in bytes.

        :return: the gas.
        """
        return size * self.calldata_per_byte

    def log_cost(self, topics: int, size: int) -> int:
        """
        Gas for one event.

        :param topics: number of topics.
        :param size: data length in bytes.

        :return: the gas.
        """
        return self.log_base + topics * self.log_per_topic + size * self.log_per_byte


# Addresses and words


def derive_address(creator: str, nonce: int) -> str:
    """
    Derive a fresh address from its creator and the creator's nonce.

    :param creator: creator address or label.
    :param nonce: creator's transaction counter.

    :return: hex-rendered 20-byte address.
    """
    digest = hashlib.sha256(creator.encode("utf-8") + nonce.to_bytes(8, "big"))
    return "0x" + digest.hexdigest()[: 2 * ADDRESS_SIZE]


def address_bytes(address: str) -> bytes:
    """
    Raw bytes of a hex address.

    :param address: ``0x`` followed by 40 hex digits.

    :return: 20 bytes.

    :raises InvalidInputError: if the address is malformed.
    """
    try:
        raw = bytes.fromhex(address[2:]) if address.startswith("0x") else b""
    except ValueError:
        raw = b""
    if len(raw) != ADDRESS_SIZE:
        raise InvalidInputError(f"Malformed address {address!r}.")
    return raw


def address_from_bytes(raw: bytes) -> str:
    """
    Render 20 address bytes as hex.

    :param raw: the bytes.

    :return: the address.
    """
    return "0x" + raw.hex()


def is_address(value: str) -> bool:
    """
    Whether a string is a well-formed address.

    :param value: candidate string.

    :return: True if well formed.
    """
    try:
        address_bytes(value)
    except InvalidInputError:
        return False
    return True


def to_word(value: int) -> bytes:
    """
    Encode an integer as a 32-byte two's-complement big-endian word.

    :param value: signed integer.

    :return: the word.

    :raises InvalidInputError: if the value does not fit.
    """
    try:
        return int(value).to_bytes(WORD_SIZE, "big", signed=True)
    except OverflowError as e:
        raise InvalidInputError(f"Value {value} does not fit a word.") from e


def from_word(data: bytes) -> int:
    """
    Decode a 32-byte two's-complement big-endian word.

    :param data: the word.

    :return: signed integer.

    :raises InvalidInputError: if the length is wrong.
    """
    if len(data) != WORD_SIZE:
        raise InvalidInputError(f"A word is {WORD_SIZE} bytes, got {len(data)}.")
    return int.from_bytes(data, "big", signed=True)


def encode_words(values: Union[Sequence[int], np.ndarray]) -> bytes:
    """
    Encode 64-bit integers as consecutive 32-byte words.

    :param values: integers within int64 range.

    :return: 32 bytes per value.
    """
    values = np.asarray(values, dtype=np.int64).reshape(-1)
    words = np.zeros((values.size, WORD_SIZE), dtype=np.uint8)
    words[values < 0, : WORD_SIZE - 8] = 0xFF
    words[:, WORD_SIZE - 8 :] = values.astype(">i8").view(np.uint8).reshape(-1, 8)
    return words.tobytes()


def decode_words(data: bytes) -> np.ndarray:
    """
    Decode consecutive 32-byte words holding 64-bit integers.

    :param data: the words.

    :return: int64 array.

    :raises InvalidInputError: if the length is not a whole number of words or
        a word does not fit 64 bits.
    """
    if len(data) % WORD_SIZE:
        raise InvalidInputError("Word data must be a multiple of 32 bytes.")
    if not data:
        return np.zeros(0, dtype=np.int64)
    words = np.frombuffer(data, dtype=np.uint8).reshape(-1, WORD_SIZE)
    low = np.ascontiguousarray(words[:, WORD_SIZE - 8 :])
    values = low.view(">i8").reshape(-1).astype(np.int64)
    expected = np.where(values < 0, 0xFF, 0).astype(np.uint8)
    if np.any(words[:, : WORD_SIZE - 8] != expected[:, np.newaxis]):
        raise InvalidInputError("Word value exceeds 64 bits.")
    return values


def pack_bytes(data: bytes) -> List[int]:
    """
    Split bytes into words, right-padding the last one with zeros.

    :param data: the bytes.

    :return: unsigned word values.
    """
    return [
        int.from_bytes(data[i : i + WORD_SIZE].ljust(WORD_SIZE, b"\0"), "big")
        for i in range(0, len(data), WORD_SIZE)
    ]


def unpack_bytes(words: Sequence[int], length: int) -> bytes:
    """
    Reassemble bytes packed by :func:`pack_bytes`.

    :param words: unsigned word values.
    :param length: original byte length.

    :return: the bytes.
    """
    joined = b"".join(int(w).to_bytes(WORD_SIZE, "big") for w in words)
    return joined[:length]


# Records


@dataclass(frozen=True)
class EventRecord:
    """An entry of the append-only event log."""

    sequence: int
    emitter: str
    topics: Tuple[bytes, ...]
    data: bytes

    def to_bytes(self) -> bytes:
        """
        Wire encoding.

        Sequence (u64 LE), emitter (20 bytes), topic count (u8), topics
        (32 bytes each), data length (u32 LE), data.

        :return: the encoded record.
        """
        return b"".join(
            [
                struct.pack("<Q", self.sequence),
                address_bytes(self.emitter),
                struct.pack("<B", len(self.topics)),
                *self.topics,
                struct.pack("<I", len(self.data)),
                self.data,
            ]
        )

    @classmethod
    def read_from(cls, data: bytes, offset: int = 0) -> Tuple["EventRecord", int]:
        """
        Decode one record from a buffer.

        :param data: the buffer.
        :param offset: where the record starts.

        :return: the record and the offset just past it.

        :raises CorruptionError: if the buffer is truncated.
        """
        try:
            (sequence,) = struct.unpack_from("<Q", data, offset)
            offset += 8
            emitter = address_from_bytes(data[offset : offset + ADDRESS_SIZE])
            offset += ADDRESS_SIZE
            (count,) = struct.unpack_from("<B", data, offset)
            offset += 1
            topics = []
            for _ in range(count):
                topic = data[offset : offset + TOPIC_SIZE]
                if len(topic) != TOPIC_SIZE:
                    raise CorruptionError("Truncated event topic.")
                topics.append(topic)
                offset += TOPIC_SIZE
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
        except struct.error as e:
            raise CorruptionError(f"Truncated event record: {e}") from e
        payload = data[offset : offset + length]
        if len(payload) != length:
            raise CorruptionError("Truncated event data.")
        return cls(sequence, emitter, tuple(topics), payload), offset + length

    @classmethod
    def from_bytes(cls, data: bytes) -> "EventRecord":
        """
        Decode exactly one record.

        :param data: the encoded record.

        :return: the record.

        :raises CorruptionError: on truncated or trailing bytes.
        """
        record, end = cls.read_from(data)
        if end != len(data):
            raise CorruptionError("Trailing bytes after event record.")
        return record


@dataclass
class Account:
    """A token-holding account."""

    address: str
    balance: int = 0
    nonce: int = 0


class TxKind(enum.Enum):
    """What a transaction does."""

    DEPLOY = "deploy"
    CALL = "call"
    TRANSFER = "transfer"


@dataclass
class Transaction:
    """
    A submitted transaction.

    For a deploy, ``target`` is the handler name; otherwise it is an address.
    ``gas_used`` is filled in on execution.
    """

    kind: TxKind
    sender: str
    target: str
    name: str = ""
    args: bytes = b""
    value: int = 0
    gas_used: Optional[int] = None


@dataclass(frozen=True)
class Receipt:
    """Outcome of a journaled transaction."""

    index: int
    transaction: Transaction
    success: bool
    gas_used: int
    fee: int
    return_data: bytes = b""
    events: Tuple[EventRecord, ...] = ()
    contract_address: Optional[str] = None
    error: Optional[str] = None

    def raise_for_status(self) -> "Receipt":
        """
        Raise if the handler failed.

        :return: this receipt, when successful.

        :raises HandlerError: if the transaction was rolled back.
        """
        if not self.success:
            raise HandlerError(self.error or "transaction failed")
        return self


@dataclass(frozen=True)
class ViewResult:
    """Outcome of a read-only call."""

    return_data: bytes
    gas_used: int


# Handlers


class ContractHandler:
    """
    Base class for native contract code.

    Subclasses implement ``init`` and any number of ``call_<name>`` methods,
    each taking an :class:`ExecutionContext` and argument bytes.
    """

    def init(self, ctx: "ExecutionContext", args: bytes) -> None:
        """
        Run once at deploy time.

        :param ctx: execution context of the new contract.
        :param args: init arguments.
        """


HANDLERS: Dict[str, Type[ContractHandler]] = {}


def register_handler(
    name: str,
) -> Callable[[Type[ContractHandler]], Type[ContractHandler]]:
    """
    Class decorator registering a handler under a name.

    :param name: handler name used by deploy transactions.

    :return: the decorator.
    """

    def decorator(cls: Type[ContractHandler]) -> Type[ContractHandler]:
        HANDLERS[name] = cls
        return cls

    return decorator


def _handler_class(name: str) -> Type[ContractHandler]:
    try:
        return HANDLERS[name]
    except KeyError as e:
        raise ConfigurationError(f"Unknown contract handler '{name}'.") from e


@dataclass
class Contract:
    """A deployed contract."""

    address: str
    handler_name: str
    creator: str
    handler: ContractHandler
    storage: Dict[int, int] = field(default_factory=dict)
    revision: int = 0
    digest: int = 0


def _slot_hash(key: int, value: int) -> int:
    digest = hashlib.sha256(key.to_bytes(WORD_SIZE, "big") + to_word(value))
    return int.from_bytes(digest.digest(), "big")


class GasMeter:
    """Running gas total of one transaction."""

    def __init__(self, schedule: GasSchedule):
        self.schedule = schedule
        self.used = 0

    def charge(self, amount: int) -> None:
        """
        Add gas.

        :param amount: gas units.
        """
        self.used += amount


@dataclass
class _Pending:
    writes: Dict[str, Dict[int, int]] = field(default_factory=dict)
    events: List[Tuple[str, Tuple[bytes, ...], bytes]] = field(default_factory=list)
    contracts: Dict[str, Contract] = field(default_factory=dict)


class ExecutionContext:
    """What a handler sees while it runs."""

    # pylint: disable=too-many-arguments,too-many-positional-arguments
    def __init__(
        self,
        ledger: "Ledger",
        meter: GasMeter,
        pending: _Pending,
        address: str,
        caller: str,
        read_only: bool,
    ):
        self._ledger = ledger
        self._meter = meter
        self._pending = pending
        self.address = address
        self.caller = caller
        self.read_only = read_only

    @property
    def gas(self) -> GasSchedule:
        """
        The gas schedule in force.

        :return: the schedule.
        """
        return self._meter.schedule

    @property
    def gas_used(self) -> int:
        """
        Gas used so far by the whole transaction.

        :return: gas units.
        """
        return self._meter.used

    @property
    def clean(self) -> bool:
        """
        Whether this contract has no uncommitted writes.

        :return: True when storage reads see committed state only.
        """
        return not self._pending.writes.get(self.address)

    @property
    def revision(self) -> int:
        """
        Committed storage revision of this contract.

        :return: the revision; changes on every committed write.
        """
        contract = self._ledger._contracts.get(self.address)
        return contract.revision if contract else -1

    def require(self, condition: bool, message: str) -> None:
        """
        Fail the transaction unless ``condition`` holds.

        :param condition: the condition.
        :param message: error message.

        :raises HandlerError: if the condition is false.
        """
        if not condition:
            raise HandlerError(message)

    def _committed(self, address: str) -> Mapping[int, int]:
        contract = self._ledger._contracts.get(address) or self._pending.contracts.get(
            address
        )
        return contract.storage if contract else {}

    def has(self, key: int) -> bool:
        """
        Whether a slot has ever been written.

        :param key: slot key.

        :return: True if written.
        """
        writes = self._pending.writes.get(self.address, {})
        return key in writes or key in self._committed(self.address)

    def sload(self, key: int) -> int:
        """
        Read a storage word.

        :param key: slot key.

        :return: the word, or 0 for an unwritten slot.
        """
        writes = self._pending.writes.get(self.address, {})
        if key in writes:
            return writes[key]
        return self._committed(self.address).get(key, 0)

    def sload_words(self, base: int, count: int) -> List[int]:
        """
        Read consecutive storage words.

        :param base: first slot.
        :param count: number of slots.

        :return: the words.
        """
        writes = self._pending.writes.get(self.address, {})
        committed = self._committed(self.address)
        return [
            writes[k] if k in writes else committed.get(k, 0)
            for k in range(base, base + count)
        ]

    def sstore(self, key: int, value: int) -> None:
        """
        Write a storage word.

        :param key: slot key in [0, 2^256).
        :param value: signed 256-bit value.

        :raises HandlerError: in a read-only context or for out-of-range values.
        """
        self.sstore_words(key, [value])

    def sstore_words(self, base: int, values: Iterable[int]) -> None:
        """
        Write consecutive storage words.

        :param base: first slot.
        :param values: the words.

        :raises HandlerError: in a read-only context or for out-of-range values.
        """
        if self.read_only:
            raise HandlerError("Storage write inside a read-only call.")
        writes = self._pending.writes.setdefault(self.address, {})
        committed = self._committed(self.address)
        schedule = self._meter.schedule
        gas = 0
        for offset, value in enumerate(values):
            key = base + offset
            value = int(value)
            if not 0 <= key < SLOT_LIMIT or not WORD_MIN <= value <= WORD_MAX:
                raise HandlerError(f"Storage slot {key} or value out of range.")
            fresh = key not in writes and key not in committed
            gas += (
                schedule.storage_write_new if fresh else schedule.storage_write_update
            )
            writes[key] = value
        self._meter.charge(gas)

    def emit(self, topics: Sequence[bytes], data: bytes) -> None:
        """
        Emit an event.

        :param topics: up to four 32-byte topics.
        :param data: event payload.

        :raises HandlerError: in a read-only context, for more than four
            topics or for a topic that is not 32 bytes.
        """
        if self.read_only:
            raise HandlerError("Event emitted inside a read-only call.")
        if len(topics) > MAX_EVENT_TOPICS:
            raise HandlerError(f"At most {MAX_EVENT_TOPICS} topics per event.")
        if any(len(t) != TOPIC_SIZE for t in topics):
            raise HandlerError(f"Topics must be {TOPIC_SIZE} bytes.")
        self._meter.charge(self._meter.schedule.log_cost(len(topics), len(data)))
        self._pending.events.append((self.address, tuple(topics), bytes(data)))

    def count_distance_ops(self, count: int) -> None:
        """
        Meter vector similarity computations.

        :param count: number of similarities computed.
        """
        self._meter.charge(count * self._meter.schedule.compute_per_distance_op)

    def storage_of(self, address: str) -> Mapping[int, int]:
        """
        Committed storage of another contract.

        :param address: contract address.

        :return: read-only view of its storage.
        """
        return MappingProxyType(dict(self._committed(address)))

    def call(self, target: str, name: str, args: bytes = b"") -> bytes:
        """
        Call another contract within this transaction.

        :param target: contract address.
        :param name: method name.
        :param args: argument bytes.

        :return: the callee's return bytes.
        """
        contract = self._ledger._contracts.get(target) or self._pending.contracts.get(
            target
        )
        self.require(contract is not None, f"No contract at {target}.")
        inner = ExecutionContext(
            self._ledger,
            self._meter,
            self._pending,
            target,
            self.address,
            self.read_only,
        )
        return _dispatch(contract.handler, inner, name, args)


def _dispatch(
    handler: ContractHandler, ctx: ExecutionContext, name: str, args: bytes
) -> bytes:
    method = getattr(handler, f"call_{name}", None)
    if method is None or not name.isidentifier():
        raise HandlerError(f"Unknown method '{name}'.")
    result = method(ctx, args)
    return b"" if result is None else bytes(result)


# Ledger


@dataclass(frozen=True)
class Genesis:
    """Initial balances and chain parameters."""

    allocations: Dict[str, int] = field(default_factory=dict)
    gas: GasSchedule = field(default_factory=GasSchedule)
    gas_price: int = 1
    checkpoint_every: int = 100

    def to_bytes(self) -> bytes:
        """
        Canonical JSON encoding.

        :return: UTF-8 bytes.
        """
        payload = {
            "allocations": dict(sorted(self.allocations.items())),
            "gas": dataclasses.asdict(self.gas),
            "gas_price": self.gas_price,
            "checkpoint_every": self.checkpoint_every,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Genesis":
        """
        Decode the canonical JSON encoding.

        :param data: UTF-8 bytes.

        :return: the genesis.

        :raises CorruptionError: if the payload is not a genesis record.
        """
        try:
            payload = json.loads(data.decode("utf-8"))
            return cls(
                allocations={k: int(v) for k, v in payload["allocations"].items()},
                gas=GasSchedule(**payload["gas"]),
                gas_price=int(payload["gas_price"]),
                checkpoint_every=int(payload["checkpoint_every"]),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise CorruptionError(f"Malformed genesis record: {e}") from e


class Ledger:
    """
    A single-writer chain.

    All submissions and reads take one re-entrant lock, so readers only ever
    observe fully committed transactions.
    """

    def __init__(self, genesis: Optional[Genesis] = None):
        self.genesis = genesis or Genesis()
        self.gas = self.genesis.gas
        self.gas_price = self.genesis.gas_price
        self._lock = threading.RLock()
        self._accounts: Dict[str, Account] = {}
        self._contracts: Dict[str, Contract] = {}
        self._events: List[EventRecord] = []
        self._events_by_emitter: Dict[str, List[int]] = {}
        self._event_chain = bytes(32)
        self._transactions: List[Transaction] = []
        self._checkpoints: List[Tuple[int, str]] = []
        self._account(FEE_SINK_ADDRESS)
        for address, amount in sorted(self.genesis.allocations.items()):
            if amount < 0:
                raise InvalidInputError(f"Negative genesis allocation for {address}.")
            self._account(address).balance += amount

    def _account(self, address: str) -> Account:
        account = self._accounts.get(address)
        if account is None:
            address_bytes(address)
            account = self._accounts[address] = Account(address)
        return account

    # Submission

    def deploy_contract(
        self, sender: str, handler_name: str, init_args: bytes = b""
    ) -> Receipt:
        """
        Deploy a contract.

        :param sender: deploying account.
        :param handler_name: registered handler name.
        :param init_args: arguments for the handler's ``init``.

        :return: the receipt; ``contract_address`` is set on success.

        :raises ConfigurationError: for an unknown handler name.
        """
        _handler_class(handler_name)
        return self.submit(
            Transaction(TxKind.DEPLOY, sender, handler_name, "init", bytes(init_args))
        )

    def call(self, sender: str, target: str, name: str, args: bytes = b"") -> Receipt:
        """
        Call a contract method.

        The handler's effects apply atomically. On handler failure they are
        rolled back, the gas is still charged and the receipt reports the
        error.

        :param sender: calling account.
        :param target: contract address.
        :param name: method name.
        :param args: argument bytes.

        :return: the receipt.
        """
        return self.submit(Transaction(TxKind.CALL, sender, target, name, bytes(args)))

    def transfer(self, sender: str, recipient: str, amount: int) -> Receipt:
        """
        Move tokens between accounts.

        :param sender: paying account.
        :param recipient: receiving account; created if new.
        :param amount: token units.

        :return: the receipt.
        """
        return self.submit(
            Transaction(TxKind.TRANSFER, sender, recipient, "transfer", value=amount)
        )

    def submit(self, tx: Transaction) -> Receipt:
        """
        Execute and journal a transaction.

        :param tx: the transaction.

        :return: the receipt.

        :raises NotFoundError: if the sender or target does not exist.
        :raises InsufficientFundsError: if the sender cannot pay; nothing is
            journaled.
        """
        with self._lock:
            sender = self._accounts.get(tx.sender)
            if sender is None:
                raise NotFoundError(f"No account {tx.sender}.")
            if tx.kind is TxKind.TRANSFER:
                return self._transfer(sender, tx)
            return self._execute(sender, tx)

    def _transfer(self, sender: Account, tx: Transaction) -> Receipt:
        if tx.value < 0:
            raise InvalidInputError("Transfer amount must be non-negative.")
        address_bytes(tx.target)
        gas = self.gas.tx_base
        fee = gas * self.gas_price
        if sender.balance < tx.value + fee:
            raise InsufficientFundsError(
                f"{tx.sender} holds {sender.balance}, needs {tx.value + fee}."
            )
        sender.balance -= tx.value + fee
        self._account(tx.target).balance += tx.value
        self._accounts[FEE_SINK_ADDRESS].balance += fee
        sender.nonce += 1
        return self._journal(tx, gas, fee, success=True)

    def _execute(self, sender: Account, tx: Transaction) -> Receipt:
        if tx.kind is TxKind.CALL and tx.target not in self._contracts:
            raise NotFoundError(f"No contract at {tx.target}.")
        handler_class = (
            _handler_class(tx.target) if tx.kind is TxKind.DEPLOY else ContractHandler
        )
        meter = GasMeter(self.gas)
        meter.charge(self.gas.tx_base + self.gas.calldata_cost(len(tx.args)))
        if sender.balance < meter.used * self.gas_price:
            raise InsufficientFundsError(f"{tx.sender} cannot pay the base gas.")

        pending = _Pending()
        address = None
        return_data = b""
        error = None
        try:
            if tx.kind is TxKind.DEPLOY:
                address = derive_address(tx.sender, sender.nonce)
                handler = handler_class()
                pending.contracts[address] = Contract(
                    address, tx.target, tx.sender, handler
                )
                ctx = ExecutionContext(self, meter, pending, address, tx.sender, False)
                handler.init(ctx, tx.args)
            else:
                contract = self._contracts[tx.target]
                ctx = ExecutionContext(
                    self, meter, pending, tx.target, tx.sender, False
                )
                return_data = _dispatch(contract.handler, ctx, tx.name, tx.args)
        except (HandlerError, InvalidInputError) as e:
            error = str(e)
            logger.debug("Transaction %s.%s failed: %s", tx.target, tx.name, error)
        except Exception as e:  # pylint: disable=broad-exception-caught
            error = f"{type(e).__name__}: {e}"
            logger.warning("Handler %s.%s raised %s", tx.target, tx.name, error)

        fee = meter.used * self.gas_price
        if error is None and sender.balance < fee:
            raise InsufficientFundsError(
                f"{tx.sender} holds {sender.balance}, needs {fee} for gas."
            )
        fee = min(fee, sender.balance)
        sender.balance -= fee
        self._accounts[FEE_SINK_ADDRESS].balance += fee
        sender.nonce += 1
        events: Tuple[EventRecord, ...] = ()
        if error is None:
            events = self._commit(pending)
        else:
            address = None
            return_data = b""
        return self._journal(
            tx,
            meter.used,
            fee,
            success=error is None,
            return_data=return_data,
            events=events,
            contract_address=address,
            error=error,
        )

    def _commit(self, pending: _Pending) -> Tuple[EventRecord, ...]:
        self._contracts.update(pending.contracts)
        for address, writes in pending.writes.items():
            contract = self._contracts[address]
            digest = contract.digest
            for key, value in writes.items():
                if key in contract.storage:
                    digest -= _slot_hash(key, contract.storage[key])
                digest += _slot_hash(key, value)
                contract.storage[key] = value
            contract.digest = digest % SLOT_LIMIT
            contract.revision += 1
        events = []
        for emitter, topics, data in pending.events:
            record = EventRecord(len(self._events), emitter, topics, data)
            self._events_by_emitter.setdefault(emitter, []).append(record.sequence)
            self._events.append(record)
            self._event_chain = hashlib.sha256(
                self._event_chain + record.to_bytes()
            ).digest()
            events.append(record)
        return tuple(events)

    def _journal(self, tx: Transaction, gas: int, fee: int, **kwargs) -> Receipt:
        tx.gas_used = gas
        self._transactions.append(tx)
        index = len(self._transactions) - 1
        every = self.genesis.checkpoint_every
        if every and len(self._transactions) % every == 0:
            self._checkpoints.append((len(self._transactions), self.state_hash()))
        return Receipt(index, tx, gas_used=gas, fee=fee, **kwargs)

    def view(
        self, sender: str, target: str, name: str, args: bytes = b""
    ) -> ViewResult:
        """
        Run a method read-only, metering gas but committing nothing.

        :param sender: notional caller.
        :param target: contract address.
        :param name: method name.
        :param args: argument bytes.

        :return: the return bytes and gas the call would use.

        :raises NotFoundError: if there is no contract at ``target``.
        :raises HandlerError: if the handler fails or tries to write.
        """
        with self._lock:
            contract = self._contracts.get(target)
            if contract is None:
                raise NotFoundError(f"No contract at {target}.")
            meter = GasMeter(self.gas)
            meter.charge(self.gas.tx_base + self.gas.calldata_cost(len(args)))
            ctx = ExecutionContext(self, meter, _Pending(), target, sender, True)
            try:
                return_data = _dispatch(contract.handler, ctx, name, bytes(args))
            except RegistryError:
                raise
            except Exception as e:  # pylint: disable=broad-exception-caught
                raise HandlerError(f"{type(e).__name__}: {e}") from e
            return ViewResult(return_data, meter.used)

    # Reads

    def get_events(
        self,
        emitter: Optional[str] = None,
        topics: Sequence[bytes] = (),
        from_sequence: int = 0,
    ) -> List[EventRecord]:
        """
        Read the event log.

        :param emitter: only events from this contract.
        :param topics: only events whose leading topics equal these.
        :param from_sequence: first sequence number to return.

        :return: matching records in sequence order.
        """
        with self._lock:
            if emitter is None:
                candidates = self._events[max(from_sequence, 0) :]
            else:
                positions = self._events_by_emitter.get(emitter, [])
                start = np.searchsorted(positions, from_sequence) if positions else 0
                candidates = [self._events[i] for i in positions[int(start) :]]
            topics = tuple(topics)
            if not topics:
                return list(candidates)
            return [r for r in candidates if r.topics[: len(topics)] == topics]

    @property
    def event_count(self) -> int:
        """
        Number of events in the log.

        :return: the next sequence number.
        """
        return len(self._events)

    def balance_of(self, address: str) -> int:
        """
        Token balance of an account.

        :param address: the account.

        :return: the balance; 0 for unknown accounts.
        """
        with self._lock:
            account = self._accounts.get(address)
            return account.balance if account else 0

    def nonce_of(self, address: str) -> int:
        """
        Transaction counter of an account.

        :param address: the account.

        :return: the nonce; 0 for unknown accounts.
        """
        with self._lock:
            account = self._accounts.get(address)
            return account.nonce if account else 0

    def has_account(self, address: str) -> bool:
        """
        Whether an account exists.

        :param address: the account.

        :return: True if it exists.
        """
        return address in self._accounts

    def total_supply(self) -> int:
        """
        Sum of all balances, fee sink included.

        :return: the supply.
        """
        with self._lock:
            return sum(a.balance for a in self._accounts.values())

    def contract(self, address: str) -> Contract:
        """
        Look up a deployed contract.

        :param address: the contract address.

        :return: the contract.

        :raises NotFoundError: if none is deployed there.
        """
        try:
            return self._contracts[address]
        except KeyError as e:
            raise NotFoundError(f"No contract at {address}.") from e

    def storage_of(self, address: str) -> Mapping[int, int]:
        """
        Read-only view of a contract's storage.

        :param address: the contract address.

        :return: slot to word mapping.
        """
        return MappingProxyType(self.contract(address).storage)

    @property
    def transactions(self) -> List[Transaction]:
        """
        Journaled transactions in execution order.

        :return: a copy of the list.
        """
        with self._lock:
            return list(self._transactions)

    @property
    def checkpoints(self) -> List[Tuple[int, str]]:
        """
        State hashes recorded every ``checkpoint_every`` transactions.

        :return: (transaction count, state hash) pairs.
        """
        return list(self._checkpoints)

    def state_hash(self) -> str:
        """
        Digest of all accounts, contract storage and the event log.

        :return: hex SHA-256.
        """
        with self._lock:
            digest = hashlib.sha256()
            for address in sorted(self._accounts):
                account = self._accounts[address]
                digest.update(address_bytes(address))
                digest.update(to_word(account.balance))
                digest.update(account.nonce.to_bytes(8, "big"))
            for address in sorted(self._contracts):
                contract = self._contracts[address]
                digest.update(address_bytes(address))
                digest.update(contract.handler_name.encode("utf-8") + b"\0")
                digest.update(contract.digest.to_bytes(WORD_SIZE, "big"))
                digest.update(len(contract.storage).to_bytes(8, "big"))
            digest.update(self._event_chain)
            digest.update(len(self._events).to_bytes(8, "big"))
            return digest.hexdigest()


def replay(
    transactions: Iterable[Transaction], genesis: Optional[Genesis] = None
) -> Ledger:
    """
    Rebuild a ledger by re-executing transactions.

    Handlers must be registered before replay, which importing
    :mod:`consent_registry.registry` does.

    :param transactions: transactions in their original order.
    :param genesis: genesis of the original chain.

    :return: the rebuilt ledger.
    """
    ledger = Ledger(genesis)
    for tx in transactions:
        ledger.submit(dataclasses.replace(tx, gas_used=None))
    return ledger


# Journal

JOURNAL_MAGIC = b"CRJ1"
RECORD_GENESIS = b"G"
RECORD_TX = b"T"
RECORD_CHECKPOINT = b"C"
_KIND_CODES = {TxKind.DEPLOY: 0, TxKind.CALL: 1, TxKind.TRANSFER: 2}
_KINDS_BY_CODE = {v: k for k, v in _KIND_CODES.items()}


def _string(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _encode_tx(tx: Transaction) -> bytes:
    return b"".join(
        [
            struct.pack("<B", _KIND_CODES[tx.kind]),
            _string(tx.sender),
            _string(tx.target),
            _string(tx.name),
            to_word(tx.value),
            struct.pack("<I", len(tx.args)),
            tx.args,
        ]
    )


def _decode_tx(data: bytes) -> Transaction:
    offset = 1
    strings = []
    for _ in range(3):
        (length,) = struct.unpack_from("<H", data, offset)
        offset += 2
        strings.append(data[offset : offset + length].decode("utf-8"))
        offset += length
    value = from_word(data[offset : offset + WORD_SIZE])
    offset += WORD_SIZE
    (length,) = struct.unpack_from("<I", data, offset)
    offset += 4
    args = data[offset : offset + length]
    if len(args) != length:
        raise CorruptionError("Truncated transaction arguments.")
    return Transaction(_KINDS_BY_CODE[data[0]], *strings, args=args, value=value)


def _record(kind: bytes, payload: bytes) -> bytes:
    return kind + struct.pack("<I", len(payload)) + payload


def write_journal(ledger: Ledger, path: Union[str, Path]) -> None:
    """
    Write a ledger's genesis, transactions and checkpoints to a file.

    The file is replaced atomically.

    :param ledger: the ledger.
    :param path: destination file.
    """
    path = Path(path)
    checkpoints = dict(ledger.checkpoints)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(JOURNAL_MAGIC)
            f.write(_record(RECORD_GENESIS, ledger.genesis.to_bytes()))
            for count, tx in enumerate(ledger.transactions, start=1):
                f.write(_record(RECORD_TX, _encode_tx(tx)))
                if count in checkpoints:
                    payload = struct.pack("<Q", count) + bytes.fromhex(
                        checkpoints[count]
                    )
                    f.write(_record(RECORD_CHECKPOINT, payload))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_journal(
    path: Union[str, Path],
) -> Tuple[Genesis, List[Union[Transaction, Tuple[int, str]]]]:
    """
    Read a journal file.

    :param path: the journal.

    :return: the genesis and, in file order, transactions and
        (transaction count, state hash) checkpoints.

    :raises CorruptionError: if the file is not a well-formed journal.
    """
    data = Path(path).read_bytes()
    if not data.startswith(JOURNAL_MAGIC):
        raise CorruptionError(f"{path} is not a chain journal.")
    offset = len(JOURNAL_MAGIC)
    genesis = None
    entries: List[Union[Transaction, Tuple[int, str]]] = []
    while offset < len(data):
        kind = data[offset : offset + 1]
        try:
            (length,) = struct.unpack_from("<I", data, offset + 1)
        except struct.error as e:
            raise CorruptionError("Truncated journal record header.") from e
        payload = data[offset + 5 : offset + 5 + length]
        if len(payload) != length:
            raise CorruptionError("Truncated journal record.")
        offset += 5 + length
        try:
            if kind == RECORD_GENESIS:
                genesis = Genesis.from_bytes(payload)
            elif kind == RECORD_TX:
                entries.append(_decode_tx(payload))
            elif kind == RECORD_CHECKPOINT:
                (count,) = struct.unpack_from("<Q", payload)
                entries.append((count, payload[8:].hex()))
            else:
                raise CorruptionError(f"Unknown journal record type {kind!r}.")
        except (struct.error, KeyError, UnicodeDecodeError, InvalidInputError) as e:
            raise CorruptionError(f"Malformed journal record: {e}") from e
    if genesis is None:
        raise CorruptionError(f"{path} has no genesis record.")
    return genesis, entries


def replay_journal(path: Union[str, Path]) -> Ledger:
    """
    Rebuild a ledger from a journal file, verifying every checkpoint.

    :param path: the journal.

    :return: the rebuilt ledger.

    :raises CorruptionError: if a checkpoint hash does not match.
    """
    genesis, entries = read_journal(path)
    ledger = Ledger(genesis)
    for entry in entries:
        if isinstance(entry, Transaction):
            try:
                ledger.submit(entry)
            except (NotFoundError, InsufficientFundsError) as e:
                raise CorruptionError(
                    f"Journaled transaction cannot replay: {e}"
                ) from e
            continue
        count, expected = entry
        if len(ledger.transactions) != count or ledger.state_hash() != expected:
            raise CorruptionError(f"Checkpoint after {count} transactions mismatched.")
    logger.info("Replayed %d transactions from %s", len(ledger.transactions), path)
    return ledger
