"""Behavior trees: Sequence/Fallback control nodes, registered actions, and
the RecordScope decorator that records a subtree's topics while it runs.

Trees are written as XML-style markup::

    <Sequence name="kitting">
      <RecordScope label="pick" topics="/cmd_vel /robotsound">
        <Action name="Pick" target="gearbox_bottom"/>
      </RecordScope>
    </Sequence>

Control nodes are reactive without memory: every tick restarts from the
first child.
"""

from __future__ import annotations

import enum
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Any, Callable

logger = logging.getLogger(__name__)


class Status(enum.Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"

    @property
    def terminal(self) -> bool:
        return self is not Status.RUNNING


SUCCESS, FAILURE, RUNNING = Status.SUCCESS, Status.FAILURE, Status.RUNNING


class TreeError(Exception):
    pass


class ParseError(TreeError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownElement(ParseError):
    pass


class ArityError(ParseError):
    pass


class DuplicateAction(TreeError):
    pass


class UnregisteredAction(TreeError):
    pass


@dataclass
class TickContext:
    """State shared by one tree execution.

    ``recorder`` is only needed when the tree contains RecordScope nodes.
    ``resources`` holds non-Value objects actions need (the simulator, say).
    """

    bus: Any = None
    recorder: Any = None
    collection: str | None = None
    blackboard: dict[str, Any] = field(default_factory=dict)
    resources: dict[str, Any] = field(default_factory=dict)
    session_ids: list[str] = field(default_factory=list)
    sessions: list[Any] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


class Node:
    name: str | None = None

    def tick(self, ctx: TickContext, registry: "ActionRegistry", path: tuple[str, ...] = ()) -> Status:
        raise NotImplementedError

    def halt(self, ctx: TickContext) -> None:
        pass

    def reset(self) -> None:
        for child in self.children():
            child.reset()

    def children(self) -> list["Node"]:
        return []


class _Control(Node):
    kind = ""

    def __init__(self, children, name: str | None = None):
        children = list(children)
        if not children:
            raise ArityError(f"{self.kind} needs at least one child")
        self._children = children
        self.name = name

    def children(self):
        return self._children

    def halt(self, ctx):
        for child in self._children:
            child.halt(ctx)

    def _halt_after(self, index: int, ctx: TickContext) -> None:
        for child in self._children[index + 1:]:
            child.halt(ctx)

    def __repr__(self):
        return f"{self.kind}({', '.join(map(repr, self._children))})"


class Sequence(_Control):
    kind = "Sequence"

    def tick(self, ctx, registry, path=()):
        path = path + (self.name,) if self.name else path
        for i, child in enumerate(self._children):
            status = child.tick(ctx, registry, path)
            if status is not SUCCESS:
                self._halt_after(i, ctx)
                return status
        return SUCCESS


class Fallback(_Control):
    kind = "Fallback"

    def tick(self, ctx, registry, path=()):
        path = path + (self.name,) if self.name else path
        for i, child in enumerate(self._children):
            status = child.tick(ctx, registry, path)
            if status is not FAILURE:
                self._halt_after(i, ctx)
                return status
        return FAILURE


class Action(Node):
    """Leaf dispatching to a registered handler ``handler(ctx, node) -> Status``.

    ``node.state`` is scratch space that persists while the action is
    RUNNING and is cleared once it finishes or is halted.
    """

    def __init__(self, name: str, params: dict[str, str] | None = None):
        self.name = name
        self.params = dict(params or {})
        self.state: dict[str, Any] = {}

    def tick(self, ctx, registry, path=()):
        try:
            handler = registry.get(self.name)
            status = handler(ctx, self)
            if not isinstance(status, Status):
                raise TypeError(f"handler returned {status!r}, not a Status")
        except Exception as exc:
            ctx.diagnostics.append(f"{self.name}: {type(exc).__name__}: {exc}")
            logger.warning("action %s failed: %s", self.name, exc)
            status = FAILURE
        if status.terminal:
            self.state = {}
        return status

    def halt(self, ctx):
        self.state = {}

    def reset(self):
        self.state = {}

    def __repr__(self):
        return f"Action({self.name!r})"


class RecordScope(Node):
    """Records ``topics`` from the first tick of its child until the child
    reaches a terminal status; the child's status passes through unchanged.

    A scope records once per run.  Re-ticks after its child finished (a
    reactive parent re-evaluating earlier siblings) do not open a new
    session until :meth:`reset`.
    """

    def __init__(self, child: Node, topics, label: str):
        if child is None:
            raise ArityError("RecordScope needs exactly one child")
        self.child = child
        self.topics = list(topics)
        self.label = label
        self.name = label
        self._handle = None
        self._recorded = False

    def children(self):
        return [self.child]

    def behavior_path(self, path: tuple[str, ...]) -> str:
        return "/".join(path + (self.label,))

    def tick(self, ctx, registry, path=()):
        if self._handle is None and not self._recorded and ctx.recorder is not None:
            self._handle = ctx.recorder.start(self.topics, self.behavior_path(path), ctx.collection)
        status = self.child.tick(ctx, registry, path + (self.label,))
        if status.terminal:
            self._finish(ctx)
        return status

    def _finish(self, ctx):
        if self._handle is None:
            return
        handle, self._handle = self._handle, None
        self._recorded = True
        summary = ctx.recorder.stop(handle)
        ctx.session_ids.append(handle.session_id)
        ctx.sessions.append(summary)

    def halt(self, ctx):
        self.child.halt(ctx)
        self._finish(ctx)

    def reset(self):
        self._recorded = False
        self.child.reset()

    def __repr__(self):
        return f"RecordScope({self.label!r}, {self.topics}, {self.child!r})"


class ActionRegistry:
    def __init__(self):
        self._handlers: dict[str, Callable] = {}

    def register(self, name: str, handler: Callable) -> None:
        if name in self._handlers:
            raise DuplicateAction(name)
        self._handlers[name] = handler

    def get(self, name: str) -> Callable:
        try:
            return self._handlers[name]
        except KeyError:
            raise UnregisteredAction(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._handlers

    def names(self) -> list[str]:
        return sorted(self._handlers)


_default_registry = ActionRegistry()


def register_action(name: str, handler: Callable, registry: ActionRegistry | None = None) -> None:
    (registry or _default_registry).register(name, handler)


def tick(root: Node, ctx: TickContext, registry: ActionRegistry | None = None) -> Status:
    return root.tick(ctx, registry or _default_registry)


def run(root: Node, ctx: TickContext, registry: ActionRegistry | None = None,
        between_ticks: Callable[[], None] | None = None, max_ticks: int = 100_000) -> Status:
    """Tick ``root`` until it returns a terminal status.

    ``between_ticks`` runs after every RUNNING tick (typically one simulator
    step).  Gives up with FAILURE after ``max_ticks``.
    """
    registry = registry or _default_registry
    root.reset()
    for _ in range(max_ticks):
        status = root.tick(ctx, registry)
        if status.terminal:
            return status
        if between_ticks is not None:
            between_ticks()
    root.halt(ctx)
    ctx.diagnostics.append(f"gave up after {max_ticks} ticks")
    return FAILURE


def iter_nodes(root: Node):
    yield root
    for child in root.children():
        yield from iter_nodes(child)


def action_names(root: Node) -> set[str]:
    return {n.name for n in iter_nodes(root) if isinstance(n, Action)}


# --------------------------------------------------------------------------
# tree markup


def _parse_elements(text: str):
    """Parse markup into ElementTree elements plus a map element -> (line, column)."""
    parser = ET.XMLPullParser(events=("start",))
    root = None
    positions = {}
    try:
        for lineno, line in enumerate(text.splitlines(keepends=True), start=1):
            parser.feed(line)
            for _, elem in parser.read_events():
                # Events for a fed line belong to that line; the column is
                # approximated by the tag's first occurrence on it.
                col = line.find("<" + elem.tag)
                positions[elem] = (lineno, col + 1 if col >= 0 else 0)
                if root is None:
                    root = elem
        parser.close()
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(str(exc).split(":")[0], line, col + 1) from None
    if root is None:
        raise ParseError("empty document", 1, 1)
    return root, positions


def _build(elem, positions) -> Node:
    line, col = positions.get(elem, (0, 0))
    tag = elem.tag
    kids = list(elem)
    if tag in ("Sequence", "Fallback"):
        if not kids:
            raise ArityError(f"{tag} needs at least one child", line, col)
        children = [_build(k, positions) for k in kids]
        cls = Sequence if tag == "Sequence" else Fallback
        return cls(children, name=elem.get("name"))
    if tag == "Action":
        if kids:
            raise ArityError("Action takes no children", line, col)
        name = elem.get("name")
        if not name:
            raise ParseError("Action needs a name attribute", line, col)
        params = {k: v for k, v in elem.attrib.items() if k != "name"}
        return Action(name, params)
    if tag == "RecordScope":
        if len(kids) != 1:
            raise ArityError(f"RecordScope needs exactly one child, got {len(kids)}", line, col)
        label = elem.get("label")
        if not label:
            raise ParseError("RecordScope needs a label attribute", line, col)
        topics = (elem.get("topics") or "").split()
        if not topics:
            raise ParseError("RecordScope needs a non-empty topics attribute", line, col)
        return RecordScope(_build(kids[0], positions), topics, label)
    raise UnknownElement(f"unknown element <{tag}>", line, col)


def parse_tree(text: str) -> Node:
    """Parse tree markup.  A ``<BehaviorTree>`` or ``<root>`` wrapper around a
    single node is accepted and ignored."""
    elem, positions = _parse_elements(text)
    while elem.tag in ("root", "BehaviorTree"):
        kids = list(elem)
        if len(kids) != 1:
            line, col = positions.get(elem, (0, 0))
            raise ArityError(f"<{elem.tag}> must wrap exactly one node", line, col)
        elem = kids[0]
    return _build(elem, positions)


def load_tree(path) -> Node:
    with open(path, encoding="utf-8") as fh:
        return parse_tree(fh.read())
