from misreg.commands import abc, experiment, fit, krig, krig_regress, mindist, simulate

COMMANDS = [krig, fit, krig_regress, mindist, abc, simulate, experiment]
