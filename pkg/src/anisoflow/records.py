"""Per-step diagnostics time series produced by the evolution loops."""

from __future__ import annotations

from dataclasses import dataclass, field

#: row schema for closed-curve runs
CLOSED_COLUMNS = ("t", "area", "energy", "mesh_ratio", "newton_iters")
#: open-curve runs append the contact-point diagnostics
OPEN_COLUMNS = CLOSED_COLUMNS + ("x_left", "x_right", "theta_left", "theta_right")


def format_value(x) -> str:
    """Shortest round-trip decimal for floats, plain digits for ints."""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    return repr(float(x))


@dataclass
class RunRecord:
    """Time-ordered diagnostic rows plus a config echo.

    Row times are strictly increasing and every row matches ``columns``.
    """

    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, row: tuple):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(self.columns)}")
        if self.rows and not row[0] > self.rows[-1][0]:
            raise ValueError("row times must be strictly increasing")
        self.rows.append(tuple(row))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def write_csv(self, fh):
        fh.write(",".join(self.columns) + "\n")
        for row in self.rows:
            fh.write(",".join(format_value(x) for x in row) + "\n")
