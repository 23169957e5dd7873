# # Finding the interaction operator between two fields
#
# Two catalog fields (template and background color) interact through a
# planted operator. The one-shot search keeps a relaxed weight per candidate
# operator, projects it onto a single choice at each step, and ends with one
# operator per field pair.

# %%
from dcolab.recovery import operator_recovery_task, recovery_config, run_recovery

# %%
for op in ("plus", "multiply", "max", "min"):
    task = operator_recovery_task([("template", "bg_color", op)], seed=0)
    chosen, trace = run_recovery(task, recovery_config(), seed=0)
    last = trace[-1]
    print(f"planted {op:8s} -> searched {chosen[(0, 1)]:8s} "
          f"(final val logloss {last.val_logloss:.5f}, {len(trace)} epochs)")
