import io
import csv

import numpy as np

# Every float written to a CSV goes through this format so that identical runs
# give byte-identical files.
FLOAT_FORMAT = "%.17g"


def format_number(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return FLOAT_FORMAT % float(value)


def to_csv(header, rows):
    """Render rows as CSV text with a header line."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    return buffer.getvalue()


def trace_csv(trace, columns):
    return to_csv(columns, trace.rows)


def profile_csv(profile):
    return to_csv(("x", "c", "c_hat", "c_eq"), zip(profile.x, profile.c, profile.c_hat, profile.c_eq))


def heading(text, char="="):
    return f"{text}\n{char * len(text)}\n"


def table(header, rows, float_format="{:.6g}"):
    """Plain-text table with right-aligned columns."""
    cells = [[c if isinstance(c, str) else float_format.format(c) for c in row] for row in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in cells)) if cells else len(str(h))
              for i, h in enumerate(header)]
    lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def equilibrium_text(eq, params, points=13):
    """The steady profile at evenly spaced points with its derivatives."""
    x = np.linspace(0.0, eq.l_s, points)
    rows = [(xi * 1e6, float(eq.value(xi)), float(eq.slope(xi)), float(eq.curvature(xi))) for xi in x]
    out = heading(f"Equilibrium profile for l_s = {eq.l_s * 1e6:.6g} um")
    out += (f"roots: r+ = {eq.root_plus:.6g} 1/m, r- = {eq.root_minus:.6g} 1/m\n"
            f"steady influx q_s* = {eq.q_s_star:.6g} mol/m^4\n"
            f"c_eq(l_s) = {float(eq.value(eq.l_s)):.6g} mol/m^3 (c_inf = {params.c_inf:.6g})\n\n")
    return out + table(("x [um]", "c_eq [mol/m3]", "c_eq' [mol/m4]", "c_eq'' [mol/m5]"), rows)


def kernel_text(table_):
    report = table_.residual_report
    out = heading(f"Kernel {table_.kind}")
    out += (f"l_bar = {table_.l_bar:.6g} m, grid_n = {table_.grid_n}, lambda = {table_.lambda_:.6g}, "
            f"gamma1 = {table_.gamma1:.6g}\n"
            f"series terms: {table_.truncation_depth}\n"
            f"residuals: pde = {report['pde']:.3e}, diagonal = {report['diagonal']:.3e}, "
            f"neumann = {report['neumann']:.3e}\n"
            f"term bound held: {report['bound_terms_ok']}, kernel bound held: {report['bound_ok']}\n")
    for note in report.get("warnings", []):
        out += f"warning: {note}\n"
    return out


def gain_text(report):
    lines = [heading("Gain check", "-")]
    lines.append(f"A - LC eigenvalues: {np.array2string(report.observer_eigs, precision=6)}\n")
    lines.append(f"A + BK eigenvalues: {np.array2string(report.controller_eigs, precision=6)}\n")
    violations = report.violations()
    lines.append("violations: " + (", ".join(violations) if violations else "none") + "\n")
    return "".join(lines)


def verify_text(results):
    """results: list of (name, passed, detail)."""
    out = heading("Verification report")
    for name, passed, detail in results:
        out += f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}\n"
    failed = sum(1 for _, passed, _ in results if not passed)
    out += f"\n{len(results) - failed} passed, {failed} failed\n"
    return out


PLOT_SCRIPT = '''"""Plot a simulation trace. Run: python {name}"""
import csv
import matplotlib.pyplot as plt


def load(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {{key: [float(row[key]) for row in rows] for key in rows[0]}}


trace = load({trace!r})
fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 9))
axes[0].plot([t / 60 for t in trace["t"]], [l * 1e6 for l in trace["l"]])
axes[0].axhline({l_s_um!r}, linestyle="--", color="gray")
axes[0].set_ylabel("l [um]")
axes[1].semilogy([t / 60 for t in trace["t"]], trace["estimate_error"], label="max |c_hat - c|")
axes[1].legend()
axes[2].plot([t / 60 for t in trace["t"]], trace["q_s"])
axes[2].set_ylabel("q_s [mol/m4]")
axes[2].set_xlabel("t [min]")

fig2, ax = plt.subplots(figsize=(7, 4))
for path in {profiles!r}:
    profile = load(path)
    x = [v * 1e6 for v in profile["x"]]
    line, = ax.plot(x, profile["c"])
    ax.plot(x, profile["c_hat"], linestyle="--", color=line.get_color())
ax.set_xlabel("x [um]")
ax.set_ylabel("c [mol/m3]")
plt.show()
'''


def plot_script(name, trace_path, profile_paths, l_s):
    return PLOT_SCRIPT.format(name=name, trace=trace_path, profiles=list(profile_paths), l_s_um=l_s * 1e6)
