from manifold_mcmc.cli import main

raise SystemExit(main())
