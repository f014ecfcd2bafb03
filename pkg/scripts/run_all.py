"""Every reference study in turn."""

import run_checks
import run_qualitative
import run_rates

if __name__ == "__main__":
    for module in (run_rates, run_checks, run_qualitative):
        print(f"== {module.__name__}")
        module.main()
