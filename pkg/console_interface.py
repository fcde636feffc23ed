import shutil
from datetime import datetime


class Colors:
    BLUE = '\033[94m'
    CYAN = '\033[96m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    BOLD = '\033[1m'
    END = '\033[0m'
    DIM = '\033[2m'
    BRIGHT_BLUE = '\033[94m\033[1m'
    BRIGHT_GREEN = '\033[92m\033[1m'


class ConsoleInterface:
    """Terminal status output around one MultiscaleStudy command"""

    def __init__(self, study, quiet=False):
        self.study = study
        self.quiet = quiet

    def get_terminal_width(self):
        """Get terminal width, default to 80 if can't determine"""
        try:
            return shutil.get_terminal_size().columns
        except (OSError, ValueError):
            return 80

    def print_separator(self, char="═", color=Colors.BLUE):
        if self.quiet:
            return
        print(f"{color}{char * self.get_terminal_width()}{Colors.END}")

    def print_status_bar(self, message, status="INFO"):
        if self.quiet and status != "ERROR":
            return
        width = self.get_terminal_width()
        status_colors = {
            "INFO": Colors.BLUE,
            "SUCCESS": Colors.GREEN,
            "WARNING": Colors.YELLOW,
            "ERROR": Colors.RED,
            "LOADING": Colors.CYAN
        }

        color = status_colors.get(status, Colors.BLUE)
        timestamp = datetime.now().strftime("%H:%M:%S")

        status_text = f"[{timestamp}] {message}"
        padding = width - len(status_text) - 3
        if padding < 0:
            status_text = status_text[:width - 6] + "..."
            padding = 0

        print(f"{color}┌{'─' * (width - 2)}┐")
        print(f"│ {status_text}{' ' * padding}│")
        print(f"└{'─' * (width - 2)}┘{Colors.END}")

    def print_report_box(self, report):
        """Print the study table in a box, one line per coarse dimension"""
        if self.quiet:
            return
        width = self.get_terminal_width()
        formulation = self.study.config.formulation
        names = ("L2k %", "H1k %") if formulation == "cg" else ("E_int %", "E_bnd %")
        header = (f"{'N_c':>6} {'lambda*':>12} {names[0]:>9} {names[1]:>9} "
                  f"{'oo ' + names[0]:>11} {'oo ' + names[1]:>11} {'iters':>5}")

        print(f"\n{Colors.BRIGHT_GREEN}┌─ {formulation.upper()} enrichment {'─' * max(0, width - 19)}┐{Colors.END}")
        lines = [header]
        for row in report.rows:
            lam = "---" if row.lam_star is None else f"{row.lam_star:.4e}"
            lines.append(f"{row.dim:>6} {lam:>12} {row.err1:>9.2f} {row.err2:>9.2f} "
                         f"{row.oo_err1:>11.2f} {row.oo_err2:>11.2f} {row.iters:>5}")
        for line in lines:
            padding = max(0, width - len(line) - 4)
            print(f"{Colors.GREEN}│ {Colors.END}{line}{' ' * padding} {Colors.GREEN}│{Colors.END}")
        print(f"{Colors.BRIGHT_GREEN}└{'─' * (width - 2)}┘{Colors.END}")

    def run(self, command):
        """Run one command with status output; returns the process exit code"""
        config = self.study.config
        self.print_status_bar(
            f"{command}: {config.field} field, nx={config.nx}, m={config.m}, {config.formulation.upper()}",
            "LOADING")

        result = self.study.run_command(command)
        if not result['success']:
            self.print_status_bar(result['error'], "ERROR")
            return 1

        if 'iterations' in result:
            self.print_status_bar(f"Picard iterations: {result['iterations']}", "INFO")
        if 'report' in result:
            self.print_report_box(result['report'])
        for path in result.get('artifacts', []):
            self.print_status_bar(f"wrote {path}", "INFO")
        self.print_status_bar(f"{command} finished; outputs in {self.study.output_dir}", "SUCCESS")
        self.print_separator("─", Colors.DIM)
        return 0
