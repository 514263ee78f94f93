"""Virtualized node workspaces.

Nodes declare virtual absolute workspace roots (e.g. "/ws/desktop") so
that transcripts and policy decisions never contain host paths; the
runtime maps each virtual root onto a real directory under the run dir.
Only paths lexically inside the virtual root resolve to real files, and
symbolic links are never followed on write.
"""

from __future__ import annotations

from pathlib import Path

from ..governance import normalize_path, path_within


class VirtualWorkspace:
    def __init__(self, virtual_root: str, real_dir: Path):
        self.virtual_root = virtual_root
        self.real_dir = Path(real_dir)
        self.real_dir.mkdir(parents=True, exist_ok=True)

    def resolve(self, target: str) -> Path | None:
        """Real path for a virtual target, or None when outside the root."""
        normalized = normalize_path(target, self.virtual_root)
        if normalized is None or not path_within(normalized, self.virtual_root):
            return None
        rel = normalized[len(self.virtual_root):].lstrip("/")
        return self.real_dir / rel if rel else self.real_dir

    def write(self, target: str, content: str) -> int:
        real = self.resolve(target)
        if real is None:
            raise PermissionError(f"write target {target!r} escapes the workspace")
        if real.is_symlink():
            raise PermissionError(f"refusing to follow symlink at {target!r}")
        real.parent.mkdir(parents=True, exist_ok=True)
        data = content.encode("utf-8")
        real.write_bytes(data)
        return len(data)

    def read(self, target: str) -> str | None:
        real = self.resolve(target)
        if real is None or not real.is_file():
            return None
        return real.read_text(encoding="utf-8")

    def listdir(self, target: str) -> list[str] | None:
        real = self.resolve(target)
        if real is None or not real.is_dir():
            return None
        return sorted(p.name for p in real.iterdir())

    def walk_files(self, target: str) -> list[str] | None:
        """Sorted relative paths of all files under a directory."""
        real = self.resolve(target)
        if real is None or not real.is_dir():
            return None
        return sorted(str(p.relative_to(real)) for p in real.rglob("*") if p.is_file())
